use unlearnlab::config::*;
use unlearnlab::LabError;
use unlearnlab_core::unlearn::MethodId;

#[test]
fn presets_resolve_budgets() {
    let desk = ExperimentConfig::preset(Preset::Desk);
    let paper = ExperimentConfig::preset(Preset::Paper);
    desk.validate().unwrap();
    paper.validate().unwrap();
    assert_eq!(desk.resolved_methods().len(), 13);
    assert!(desk.resolved_methods().iter().all(|m| m.first.epochs == 30));
    assert!(paper.resolved_methods().iter().all(|m| m.first.epochs == 100 && m.first.lr == 1e-5));
    let p = paper.pretrain_config();
    assert_eq!((p.lr, p.epochs, p.batch_size, p.weight_decay), (1e-4, 300, 128, 1e-4));
    let r = paper.relearn_config(10, unlearnlab_core::attack::ReminderSource::Retain);
    assert_eq!((r.lr, r.epochs, r.n_relearn), (1e-5, 10, 10));
    assert!(desk.pretrain_config().epochs == 100);
}

#[test]
fn preset_method_params_apply_unless_overridden() {
    let desk = ExperimentConfig::preset(Preset::Desk);
    let find = |cfg: &ExperimentConfig, m: MethodId| {
        cfg.resolved_methods().into_iter().find(|r| r.first.method == m).unwrap().first
    };
    assert_eq!(find(&desk, MethodId::WeightDistortion).params.magnitude, Some(DESK_DISTORTION_SIGMA));
    assert_eq!(find(&desk, MethodId::WeightDistReg).params.lambda_dist, DESK_LAMBDA_DIST);
    assert_eq!(find(&desk, MethodId::Tar).params.tar_lr, Some(DESK_TAR_LR));
    let paper = ExperimentConfig::preset(Preset::Paper);
    assert_eq!(find(&paper, MethodId::WeightDistortion).params.magnitude, None);

    let own = ExperimentConfig::from_toml(
        r#"
[[methods]]
method = "weight_distortion"
[methods.params]
magnitude = 0.02
"#,
    )
    .unwrap();
    assert_eq!(find(&own, MethodId::WeightDistortion).params.magnitude, Some(0.02));
}

#[test]
fn toml_and_json_forms_agree() {
    let cfg = ExperimentConfig::preset(Preset::Desk);
    let toml_text = cfg.to_toml().unwrap();
    let json_text = serde_json::to_string(&cfg).unwrap();
    let a = ExperimentConfig::from_toml(&toml_text).unwrap();
    let b = ExperimentConfig::from_json(&json_text).unwrap();
    assert_eq!(a, cfg);
    assert_eq!(b, cfg);
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn minimal_toml_fills_defaults() {
    let cfg = ExperimentConfig::from_toml(
        r#"
seed = 3

[[methods]]
method = "scrub"
lr = 0.002

[[methods]]
method = "scrub"
then = { method = "weight_dist_reg", params = { lambda_dist = 0.05 } }

[attack]
n_relearn = [0]
sources = ["retain"]
"#,
    )
    .unwrap();
    cfg.validate().unwrap();
    let m = cfg.resolved_methods();
    assert_eq!(m[0].label, "scrub");
    assert_eq!(m[0].first.lr, 0.002);
    assert_eq!(m[0].first.seed, 3);
    assert_eq!(m[1].label, "scrub+weight_dist_reg");
    let second = m[1].second.as_ref().unwrap();
    assert_eq!(second.method, MethodId::WeightDistReg);
    assert_eq!(second.params.lambda_dist, 0.05);
    assert_eq!(cfg.forget_spec().seed, 3);
    assert_eq!(cfg.synthetic_config().seed, 3);
}

#[test]
fn unknown_keys_and_bad_values_are_config_errors() {
    let cases = [
        "sed = 1",
        "[attack]\nrelearn_sizes = [0]",
        "[[methods]]\nmethod = \"scrubb\"",
        "[[methods]]\nmethod = \"scrub\"\n[methods.params]\nkl = 1.0",
        "[dataset.synthetic]\nclasses = 10\nwidth = 3",
    ];
    for text in cases {
        assert!(
            matches!(ExperimentConfig::from_toml(text), Err(LabError::Config(_))),
            "{text} accepted"
        );
    }
    let invalid = [
        "[dataset.synthetic]\nseed = 4",
        "[[methods]]\nmethod = \"scrub\"\n[[methods]]\nmethod = \"scrub\"",
        "[[methods]]\nmethod = \"tar\"\nthen = { method = \"scrub\" }",
        "[attack]\nquant_bits = [1]",
        "[diagnostics]\nlmc_points = 2",
        "model = \"conv_tiny\"",
        "[[methods]]\nmethod = \"scrub\"\nlabel = \"retrain\"",
        "[pretrain]\nlr = -1.0",
        "[forget]\nscope = { kind = \"class_agnostic\" }\nselection = \"atypical\"\nsize = { count = 10 }\n[attack]\nn_relearn = [10]",
    ];
    for text in invalid {
        let cfg = ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{text}: {e}"));
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}");
    }
}

#[test]
fn hash_ignores_output_directory_only() {
    let a = ExperimentConfig::preset(Preset::Desk);
    let mut b = a.clone();
    b.output = Some("elsewhere".into());
    assert_eq!(a.hash(), b.hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn exit_codes() {
    let audit = LabError::stage("relearn/x", unlearnlab_core::Error::Audit("id 3".into()));
    assert_eq!(audit.exit_code(), 4);
    let stage = LabError::stage("pretrained", unlearnlab_core::Error::Divergence { step: 1, loss: f64::NAN });
    assert_eq!(stage.exit_code(), 3);
    assert_eq!(LabError::Config("x".into()).exit_code(), 2);
}
