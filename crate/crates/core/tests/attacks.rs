mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use unlearnlab_core::attack::*;
use unlearnlab_core::audit::AccessLog;
use unlearnlab_core::nn::{Checkpoint, Layer, ModelSpec, Network};
use unlearnlab_core::train::accuracy;

fn dense_net() -> Network {
    Network::new(ModelSpec {
        name: "lin".into(),
        input_shape: vec![2],
        layers: vec![Layer::Dense { inputs: 2, outputs: 2 }],
        taps: vec![],
        classes: 2,
    })
    .unwrap()
}

fn ckpt(net: &Network, params: Vec<f32>) -> Checkpoint {
    Checkpoint {
        params,
        bn_stats: vec![],
        spec_hash: net.spec_hash().to_string(),
        step_count: 0,
    }
}

#[test]
fn two_bit_hand_example() {
    let net = dense_net();
    // Weight tensor {−1, −0.3, 0.3, 1}; bias all zero.
    let c = ckpt(&net, vec![-1.0, -0.3, 0.3, 1.0, 0.0, 0.0]);
    let q = quantize(&net, &c, 2).unwrap();
    assert_eq!(q.params, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn quantize_edge_cases() {
    let net = dense_net();
    let zeros = ckpt(&net, vec![0.0; 6]);
    for b in [2, 8, 32] {
        assert_eq!(quantize(&net, &zeros, b).unwrap(), zeros);
    }
    assert!(quantize(&net, &zeros, 1).is_err());
    assert!(quantize(&net, &zeros, 33).is_err());
    let c = ckpt(&net, vec![0.123_456_7, -3.25, 1e-3, 2.0, -0.5, 0.75]);
    let q = quantize(&net, &c, 32).unwrap();
    for (a, b) in c.params.iter().zip(&q.params) {
        assert!(((a - b) / a).abs() <= 1e-6, "{a} vs {b}");
    }
}

proptest! {
    #[test]
    fn quantize_is_idempotent(vals in proptest::collection::vec(-5.0f32..5.0, 6), bits in 2u32..=32) {
        let net = dense_net();
        let q = quantize(&net, &ckpt(&net, vals), bits).unwrap();
        prop_assert_eq!(quantize(&net, &q, bits).unwrap(), q);
    }

    #[test]
    fn mia_depends_only_on_loss_order(m in proptest::collection::vec(0.0f64..10.0, 25), n in proptest::collection::vec(0.0f64..10.0, 25)) {
        let base = balanced_threshold(&m, &n);
        let f = |v: &f64| (v * 0.7).exp() + 3.0;
        let t = balanced_threshold(&m.iter().map(f).collect::<Vec<_>>(), &n.iter().map(f).collect::<Vec<_>>());
        prop_assert!((base.balanced_accuracy - t.balanced_accuracy).abs() < 1e-12);
        prop_assert_eq!(base.direction, t.direction);
        prop_assert!(base.balanced_accuracy >= 0.5 && base.balanced_accuracy <= 1.0);
    }
}

#[test]
fn mia_reference_cases() {
    let sep = balanced_threshold(&[0.1, 0.2, 0.3], &[1.0, 2.0, 3.0]);
    assert_eq!(sep.balanced_accuracy, 1.0);
    assert_eq!(sep.direction, MiaDirection::LowerIsMember);
    assert!(sep.threshold > 0.3 && sep.threshold < 1.0);
    let flip = balanced_threshold(&[5.0, 6.0], &[1.0, 2.0]);
    assert_eq!((flip.balanced_accuracy, flip.direction), (1.0, MiaDirection::HigherIsMember));
    let deg = balanced_threshold(&[1.0; 4], &[1.0; 4]);
    assert!(deg.degenerate);
    assert_eq!(deg.balanced_accuracy, 0.5);

    // Identically distributed populations: near chance.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    assert!((balanced_threshold(&a, &b).balanced_accuracy - 0.5).abs() <= 0.05);
}

#[test]
fn mia_on_bundle_uses_equal_populations() {
    let f = common::fixture(0);
    let r = mia_balanced_loss_threshold(&f.net, &f.pretrained, &f.bundle, None, 0).unwrap();
    assert_eq!(r.n_members, 20);
    assert_eq!(r.n_nonmembers, 20);
    let strat = (&f.splits.train_typicality, &f.splits.test_typicality);
    let ids = nonmember_ids(&f.bundle, Some(strat), 0).unwrap();
    // Atypical forget set → atypical non-members.
    assert!(ids.iter().all(|&id| f.splits.test_typicality.get(id) == Some(0.0)));
    assert_eq!(ids.len(), 20);
}

#[test]
fn short_stratum_contributes_what_it_has() {
    use unlearnlab_core::data::*;
    let f = common::fixture(0);
    let s = &f.splits;
    let spec = ForgetSpec {
        scope: ForgetScope::ClassAgnostic,
        selection: Selection::Atypical,
        size: ForgetSize::Count(30),
        seed: 0,
    };
    let b = build_bundle(&s.train, &s.test, &s.train_typicality, &spec, 0, 0).unwrap();
    let ids = nonmember_ids(&b, Some((&s.train_typicality, &s.test_typicality)), 0).unwrap();
    assert_eq!(ids.len(), 20);
    let r = mia_balanced_loss_threshold(&f.net, &f.pretrained, &b, Some((&s.train_typicality, &s.test_typicality)), 0)
        .unwrap();
    assert_eq!((r.n_members, r.n_nonmembers), (30, 20));
}

#[test]
fn relearn_never_trains_on_holdout() {
    let f = common::fixture(0);
    let log = AccessLog::new();
    for source in [ReminderSource::Retain, ReminderSource::HeldoutTest, ReminderSource::CorruptedTest] {
        let cfg = RelearnConfig {
            n_relearn: 5,
            source,
            lr: 1e-3,
            epochs: 2,
            batch_size: 32,
            ..Default::default()
        };
        let phase = format!("relearn-{source:?}");
        let (_, recs) = relearn(&f.net, &f.pretrained, &f.bundle, &cfg, Some(&log), &phase).unwrap();
        assert!(recs.iter().all(|r| r.forget_ho_acc.is_some() && r.test_acc.is_some()));
        let touched = log.touched(&phase);
        let holdout: HashSet<u64> = f.bundle.holdout.as_ref().unwrap().ids().iter().copied().collect();
        assert!(touched.iter().all(|id| !holdout.contains(id)));
        let relearn_ids: HashSet<u64> = f.bundle.relearn.as_ref().unwrap().ids().iter().copied().collect();
        assert!(relearn_ids.iter().all(|id| touched.contains(id)));
        let plan = plan_relearn(&f.bundle, &cfg).unwrap();
        let eval: HashSet<u64> = plan.eval_test.ids().iter().copied().collect();
        assert!(touched.iter().all(|id| !eval.contains(id)));
    }
    let wrong = RelearnConfig { n_relearn: 0, ..Default::default() };
    assert!(relearn(&f.net, &f.pretrained, &f.bundle, &wrong, None, "x").is_err());
}

#[test]
fn sweep_reports_unquantized_at_32_bits() {
    let f = common::fixture(0);
    let rows = quantization_sweep(&f.net, &f.pretrained, &[32, 16, 2], &f.bundle).unwrap();
    let test = accuracy(&f.net, &f.pretrained, &f.bundle.test).unwrap();
    let forget = accuracy(&f.net, &f.pretrained, f.bundle.forget_eval()).unwrap();
    assert!((rows[0].test_acc - test).abs() <= 0.001);
    assert!((rows[0].forget_acc - forget).abs() <= 0.001);
    assert!((rows[1].test_acc - test).abs() <= 0.01);
    let mut buf = Vec::new();
    write_quant_csv(&mut buf, &rows).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("bits,test_acc,forget_acc\n32,"));
}
