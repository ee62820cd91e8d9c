mod common;

use std::collections::HashSet;

use unlearnlab_core::audit::AccessLog;
use unlearnlab_core::nn::{l2_param_distance, LossKind, Objective};
use unlearnlab_core::train::{accuracy, adam_step, loss_and_grad, Monitor, OptimState};
use unlearnlab_core::unlearn::*;

fn quick(method: MethodId) -> UnlearnConfig {
    UnlearnConfig {
        lr: 1e-3,
        epochs: 3,
        batch_size: 32,
        ..UnlearnConfig::new(method)
    }
}

#[test]
fn method_ids_round_trip() {
    for m in MethodId::ALL {
        assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, format!("\"{}\"", m.name()));
    }
    assert!("scrubber".parse::<MethodId>().is_err());
}

#[test]
fn config_defaults_and_unknown_keys() {
    let cfg: UnlearnConfig = serde_json::from_str(r#"{"method":"cbft"}"#).unwrap();
    assert_eq!(cfg.lr, 1e-5);
    assert_eq!(cfg.epochs, 100);
    assert_eq!(cfg.weight_decay, 0.0);
    assert_eq!(cfg.params.lambda_mid, 1e-3);
    assert_eq!(cfg.params.loss_cap, 50.0);
    assert_eq!(cfg.params.inner_steps, 4);
    assert!(serde_json::from_str::<UnlearnConfig>(r#"{"method":"cbft","lamda_mid":1}"#).is_err());
    assert!(serde_json::from_str::<UnlearnConfig>(r#"{"method":"ssd","params":{"alpha":1}}"#).is_err());
    let bad = UnlearnConfig {
        params: MethodParams {
            lambda_dist: 0.0,
            ..Default::default()
        },
        ..UnlearnConfig::new(MethodId::WeightDistReg)
    };
    assert!(bad.validate().is_err());
}

#[test]
fn every_method_runs_deterministically_and_respects_the_contract() {
    let f = common::fixture(0);
    let allowed: HashSet<u64> = f.bundle.retain.ids().iter().chain(f.bundle.forget.ids()).copied().collect();
    for m in MethodId::ALL {
        let cfg = quick(m);
        let log = AccessLog::new();
        let mut mon = Monitor::silent("unlearn").audited(&log);
        let a = unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut mon).unwrap();
        for stage in log.stages() {
            log.verify(&stage, &allowed).unwrap();
        }
        let b = unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut Monitor::silent("unlearn")).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint, "{m} not deterministic");
        assert_eq!(a.checkpoint.spec_hash, f.pretrained.spec_hash);
        assert_eq!(a.pretrained_digest, f.pretrained.digest());
        let d = l2_param_distance(&f.pretrained, &a.checkpoint).unwrap();
        assert_eq!(a.l2_from_pretrained, d);
        assert!(d > 0.0, "{m} did not move");
        assert!(a.steps() > 0);
    }
}

#[test]
fn zero_epochs_is_identity() {
    let f = common::fixture(0);
    for m in [MethodId::Scrub, MethodId::WeightDistortion, MethodId::Tar] {
        let cfg = UnlearnConfig { epochs: 0, ..quick(m) };
        let r = unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut Monitor::silent("u")).unwrap();
        assert_eq!(r.checkpoint, f.pretrained);
        assert_eq!(r.l2_from_pretrained, 0.0);
        assert!(r.records.is_empty());
    }
}

#[test]
fn degenerate_settings_reduce_to_plain_finetuning() {
    let f = common::fixture(0);
    let run = |cfg: UnlearnConfig| unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut Monitor::silent("u")).unwrap().checkpoint;
    let mut plain = quick(MethodId::CatastrophicForgetting);
    plain.params.penalty = 0.0;
    let plain = run(plain);

    let mut sigma0 = quick(MethodId::WeightDistortion);
    sigma0.params.magnitude = Some(0.0);
    assert_eq!(run(sigma0), plain);

    // Every midpoint loss exceeds a tiny cap, so every CBFT batch is plain fine-tuning.
    let mut capped = quick(MethodId::Cbft);
    capped.params.loss_cap = 1e-12;
    assert_eq!(run(capped), plain);

    let mut l1_zero = quick(MethodId::L1Sparse);
    l1_zero.params.penalty = 0.0;
    assert_eq!(run(l1_zero), plain);
}

#[test]
fn plain_finetuning_fails_to_unlearn() {
    let f = common::fixture(0);
    let mut cfg = quick(MethodId::CatastrophicForgetting);
    cfg.params.penalty = 0.0;
    cfg.lr = 1e-4;
    let r = unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut Monitor::silent("u")).unwrap();
    let before = accuracy(&f.net, &f.pretrained, &f.bundle.forget).unwrap();
    let after = accuracy(&f.net, &r.checkpoint, &f.bundle.forget).unwrap();
    assert!(after >= before - 0.1, "before {before} after {after}");
}

#[test]
fn l1_sparsifies_more_than_l2() {
    let f = common::fixture(0);
    let near_zero = |cfg: UnlearnConfig| {
        let r = unlearn(&f.net, &f.pretrained, &f.bundle, &cfg, &mut Monitor::silent("u")).unwrap();
        r.checkpoint.params.iter().filter(|v| v.abs() < 1e-2).count()
    };
    let mut l1 = quick(MethodId::L1Sparse);
    l1.params.penalty = 0.5;
    l1.epochs = 10;
    let mut l2 = quick(MethodId::CatastrophicForgetting);
    l2.params.penalty = 0.5;
    l2.epochs = 10;
    let (a, b) = (near_zero(l1), near_zero(l2));
    assert!(a > b, "l1 {a} vs l2 {b}");
}

#[test]
fn ascent_step_increases_forget_loss() {
    let f = common::fixture(0);
    let (x, y) = f.bundle.forget.batch(&(0..f.bundle.forget.len()).collect::<Vec<_>>());
    let obj = Objective::cross_entropy(&y);
    let g = loss_and_grad(&f.net, &f.pretrained, &x, &obj).unwrap();
    let mut ckpt = f.pretrained.clone();
    let neg: Vec<f32> = g.grad.iter().map(|v| -v).collect();
    adam_step(&mut OptimState::new(neg.len()), &mut ckpt.params, &neg, 1e-4, 0.0).unwrap();
    let after = loss_and_grad(&f.net, &ckpt, &x, &obj).unwrap();
    assert!(after.loss > g.loss);
}

#[test]
fn scrub_teacher_kl_starts_at_zero() {
    let f = common::fixture(0);
    let rows: Vec<usize> = (0..16).collect();
    let (x, _) = f.bundle.retain.batch(&rows);
    let teacher = f.net.forward(&f.pretrained, &x, unlearnlab_core::nn::Mode::Train).unwrap().logits;
    let obj = Objective::single(
        16,
        LossKind::KlToReference {
            reference: &teacher,
            temperature: 1.0,
        },
    );
    let g = loss_and_grad(&f.net, &f.pretrained, &x, &obj).unwrap();
    assert!(g.loss.abs() < 1e-6);
}

#[test]
fn ssd_dampening_rules() {
    let fr = [1.0, 2.0, 0.5];
    assert_eq!(ssd_factors(&fr, &fr, 10.0, 1.0), vec![1.0; 3]);
    let ff = [100.0, 100.0, 100.0];
    let lim = ssd_factors(&fr, &ff, 1.0, 0.0);
    assert_eq!(lim, vec![0.0; 3]);
    let fac = ssd_factors(&fr, &ff, 10.0, 1.0);
    assert!(fac.iter().all(|&s| s > 0.0 && s <= 1.0));
    assert_eq!(fac[0], 0.01);
    // Zero retain importance: selected and zeroed.
    assert_eq!(ssd_factors(&[0.0], &[1.0], 10.0, 1.0), vec![0.0]);
}

#[test]
fn distance_push_gradient() {
    let reference = [0.5f32, -1.0, 2.0];
    let mut g = [0.0f32; 3];
    assert_eq!(distance_push(&reference, &reference, 0.3, &mut g), 0.0);
    assert_eq!(g, [0.0; 3]);
    // Finite differences of −λ‖θ−θ₀‖/√n in f64.
    let theta = [0.8f32, -1.5, 2.25];
    let mut g = [0.0f32; 3];
    distance_push(&theta, &reference, 0.3, &mut g);
    let value = |t: &[f64]| {
        let d: f64 = t.iter().zip(&reference).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        -0.3 * d.sqrt() / 3f64.sqrt()
    };
    for i in 0..3 {
        let mut tp: Vec<f64> = theta.iter().map(|&v| v as f64).collect();
        let mut tm = tp.clone();
        tp[i] += 1e-6;
        tm[i] -= 1e-6;
        let fd = (value(&tp) - value(&tm)) / 2e-6;
        assert!((fd - g[i] as f64).abs() < 1e-6, "{i}: fd {fd} vs {}", g[i]);
    }
}

#[test]
fn two_phase_accounts_budgets_separately() {
    let f = common::fixture(0);
    let first = quick(MethodId::Scrub);
    let second = UnlearnConfig { epochs: 2, ..quick(MethodId::WeightDistReg) };
    let mut mon = Monitor::silent("u");
    let r = compose_two_phase(&f.net, &f.pretrained, &f.bundle, &first, &second, &mut mon).unwrap();
    assert_eq!(r.label, "scrub+weight_dist_reg");
    assert_eq!(r.phases.len(), 2);
    assert_eq!(r.phases[1].epochs, 2);
    assert!(r.records.iter().any(|x| x.phase == "u.1") && r.records.iter().any(|x| x.phase == "u.2"));
    assert_eq!(mon.phase, "u");
    let mut tar_first = quick(MethodId::Tar);
    tar_first.epochs = 1;
    assert!(compose_two_phase(&f.net, &f.pretrained, &f.bundle, &tar_first, &second, &mut mon).is_err());
}

#[test]
fn tar_lr_moves_only_the_tar_phase() {
    let f = common::fixture(0);
    let run = |cfg: &UnlearnConfig| unlearn(&f.net, &f.pretrained, &f.bundle, cfg, &mut Monitor::silent("u")).unwrap();
    let mut cfg = UnlearnConfig { epochs: 1, ..quick(MethodId::Tar) };
    let shared = run(&cfg);
    cfg.params.tar_lr = Some(cfg.lr);
    assert_eq!(run(&cfg).checkpoint, shared.checkpoint);

    cfg.params.tar_lr = Some(1e-4);
    let slow = run(&cfg);
    let first = UnlearnConfig { method: MethodId::Scrub, ..cfg.clone() };
    let second = UnlearnConfig { lr: 1e-4, params: MethodParams::default(), ..cfg.clone() };
    let manual = compose_two_phase(&f.net, &f.pretrained, &f.bundle, &first, &second, &mut Monitor::silent("u")).unwrap();
    assert_eq!(slow.checkpoint, manual.checkpoint);
    assert_ne!(slow.checkpoint, shared.checkpoint);

    cfg.params.tar_lr = Some(0.0);
    assert!(cfg.validate().is_err());
}
