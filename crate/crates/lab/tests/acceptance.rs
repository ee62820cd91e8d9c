//! Desk-preset acceptance run over seeds 0, 1 and 2. Prints one line per
//! criterion. The test itself fails on pipeline errors, and on failed criteria
//! only when `UNLEARNLAB_ACCEPTANCE_STRICT` is set.
//!
//! Set `UNLEARNLAB_ACCEPTANCE_DIR` to keep the run directories; finished
//! stages are then reloaded on the next invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use unlearnlab::config::ExperimentConfig;
use unlearnlab::pipeline::{Lab, PRETRAINED, RETRAIN};
use unlearnlab::report::Report;
use unlearnlab::{load_report, run_experiment, Preset, RunManifest, RunOptions, Until};
use unlearnlab_core::attack::ReminderSource;
use unlearnlab_core::data::Selection;
use unlearnlab_core::nn::gradcheck::{check_networks, max_relative_error, LossCase};
use unlearnlab_core::nn::{load_checkpoint, save_checkpoint};
use unlearnlab_core::train::accuracy;

const SEEDS: [u64; 3] = [0, 1, 2];
const RUN_BUDGET_SECS: f64 = 30.0 * 60.0;

struct Outcome {
    lines: Vec<(String, bool, String)>,
}

impl Outcome {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((name.to_string(), pass, detail));
    }
}

fn root() -> (PathBuf, Option<tempfile::TempDir>) {
    match std::env::var_os("UNLEARNLAB_ACCEPTANCE_DIR") {
        Some(d) => (PathBuf::from(d), None),
        None => {
            let t = tempfile::tempdir().unwrap();
            (t.path().to_path_buf(), Some(t))
        }
    }
}

fn desk(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.seed = seed;
    cfg
}

fn full_run(cfg: &ExperimentConfig, dir: &Path) -> (Report, RunManifest, f64) {
    let t = Instant::now();
    let manifest = run_experiment(
        cfg,
        dir,
        RunOptions {
            threads: 1,
            until: Until::Full,
        },
    )
    .unwrap_or_else(|e| panic!("run in {} failed: {e}", dir.display()));
    (load_report(dir).unwrap(), manifest, t.elapsed().as_secs_f64())
}

fn all_seeds(per_seed: Vec<(bool, String)>) -> (bool, String) {
    let pass = per_seed.iter().all(|(p, _)| *p);
    let detail = per_seed
        .into_iter()
        .zip(SEEDS)
        .map(|((_, d), s)| format!("seed {s}: {d}"))
        .collect::<Vec<_>>()
        .join("; ");
    (pass, detail)
}

fn attack<'a>(r: &'a Report, method: &str, source: ReminderSource) -> &'a unlearnlab::report::AttackRow {
    r.attack(method, 0, source)
        .unwrap_or_else(|| panic!("no n_relearn = 0 attack row for {method}"))
}

fn test_acc(r: &Report, method: &str) -> f64 {
    r.model(method).unwrap_or_else(|| panic!("no model row for {method}")).test_acc
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["report", "report/lmc", "report/quantization", "metrics"] {
        let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
        let mut names: Vec<PathBuf> = entries.map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names.into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn acceptance() {
    let (root, _guard) = root();
    let mut out = Outcome { lines: Vec::new() };

    // 1. Gradient oracle.
    let mut worst = 0.0f64;
    for net in check_networks() {
        assert!(net.n_params() <= 200);
        for case in LossCase::ALL {
            for seed in 0..3 {
                worst = worst.max(max_relative_error(&net, case, seed).unwrap());
            }
        }
    }
    out.record("1 gradient oracle", worst <= 1e-4, format!("worst relative error {worst:.2e}"));

    let mut reports = Vec::new();
    let mut manifests = Vec::new();
    let mut times = Vec::new();
    for seed in SEEDS {
        let dir = root.join(format!("desk-seed{seed}"));
        let (r, m, secs) = full_run(&desk(seed), &dir);
        reports.push(r);
        manifests.push((dir, m));
        times.push(secs);
    }
    let retain = ReminderSource::Retain;

    // 2. Retraining from scratch is unaffected by relearning.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let worst = r
                    .attacks
                    .iter()
                    .filter(|a| a.method == RETRAIN && a.n_relearn == 0)
                    .map(|a| (a.relearned_forget_ho_acc - a.unlearned_forget_ho_acc).abs())
                    .fold(0.0, f64::max);
                (worst <= 0.05, format!("max change {worst:.3}"))
            })
            .collect(),
    );
    out.record("2 retrain-from-scratch under relearning", pass, detail);

    // 3. Output-level methods are vulnerable.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let mut ok = true;
                let mut parts = Vec::new();
                for m in ["scrub", "circuit_breakers", "random_relabel"] {
                    let a = attack(r, m, retain);
                    ok &= a.recovery >= 0.20 && a.excess_delta > 0.10;
                    parts.push(format!("{m} recovery {:.3} excess {:.3}", a.recovery, a.excess_delta));
                }
                (ok, parts.join(", "))
            })
            .collect(),
    );
    out.record("3 relearning vulnerability", pass, detail);

    // 4. Weight-space methods resist.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let mut ok = true;
                let mut parts = Vec::new();
                for m in ["weight_distortion", "weight_dist_reg"] {
                    let a = attack(r, m, retain);
                    let gap = (test_acc(r, m) - test_acc(r, RETRAIN)).abs();
                    ok &= a.excess_delta <= 0.10 && gap <= 0.10;
                    parts.push(format!("{m} excess {:.3} test gap {gap:.3}", a.excess_delta));
                }
                (ok, parts.join(", "))
            })
            .collect(),
    );
    out.record("4 tamper resistance of weight-space methods", pass, detail);

    // 5. Distance predicts recovery.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let c = r.correlation.as_ref().expect("correlation computed");
                let rho = c.spearman_l2.unwrap_or(f64::NAN);
                (rho <= -0.5, format!("spearman {rho:.3} over {} methods", c.methods))
            })
            .collect(),
    );
    out.record("5 weight-space predictor", pass, detail);

    // 6. Barriers.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let rs = r.barrier(PRETRAINED, RETRAIN).unwrap();
                let scrub = r.barrier(PRETRAINED, "scrub").unwrap();
                (rs >= 0.15 && scrub <= 0.05, format!("retrain {rs:.3}, scrub {scrub:.3}"))
            })
            .collect(),
    );
    out.record("6 interpolation barrier", pass, detail);

    // 7. Typical forget sets are predicted by the reference model.
    let (pass, detail) = all_seeds(
        SEEDS
            .iter()
            .map(|&seed| {
                let mut cfg = desk(seed);
                cfg.forget.selection = Selection::Typical;
                let dir = root.join(format!("typical-seed{seed}"));
                run_experiment(
                    &cfg,
                    &dir,
                    RunOptions {
                        threads: 1,
                        until: Until::Pretrain,
                    },
                )
                .unwrap();
                let lab = Lab::open(&cfg, &dir).unwrap();
                let (_, rs) = lab.store.cached_checkpoint(RETRAIN).unwrap().unwrap();
                let b = lab.bundle(0);
                let forget = accuracy(&lab.net, &rs, &b.forget).unwrap();
                let test = accuracy(&lab.net, &rs, &b.test).unwrap();
                (forget >= test - 0.05, format!("forget {forget:.3} test {test:.3}"))
            })
            .collect(),
    );
    out.record("7 typicality contrast", pass, detail);

    // 8. Quantization: no recovery without collapse; 16 bits and up change nothing.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let mut ok = true;
                let mut worst_gain = f64::NEG_INFINITY;
                let mut worst_high = 0.0f64;
                for m in r.models.iter().map(|m| m.method.as_str()).filter(|m| *m != PRETRAINED && *m != RETRAIN) {
                    let rows: Vec<_> = r.quantization.iter().filter(|q| q.method == m).collect();
                    let full = rows.iter().find(|q| q.bits == 32).expect("32-bit row");
                    for q in &rows {
                        let gain = q.forget_acc - full.forget_acc;
                        let test_kept = (q.test_acc - full.test_acc).abs() <= 0.05;
                        if gain > 0.05 && test_kept {
                            ok = false;
                        }
                        if test_kept {
                            worst_gain = worst_gain.max(gain);
                        }
                        if q.bits >= 16 {
                            let d = (q.test_acc - full.test_acc).abs().max((q.forget_acc - full.forget_acc).abs());
                            worst_high = worst_high.max(d);
                            ok &= d <= 0.01;
                        }
                    }
                }
                (
                    ok,
                    format!("largest forget gain with test kept {worst_gain:.3}, largest change at b>=16 {worst_high:.3}"),
                )
            })
            .collect(),
    );
    out.record("8 quantization", pass, detail);

    // 9. Membership inference.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let rs = r.mia(RETRAIN).unwrap().balanced_accuracy;
                let rr = r.mia("random_relabel").unwrap().balanced_accuracy;
                ((0.45..=0.60).contains(&rs) && rr >= rs + 0.10, format!("retrain {rs:.3}, random_relabel {rr:.3}"))
            })
            .collect(),
    );
    out.record("9 membership inference", pass, detail);

    // 10. Unlearning budget.
    let full_epochs = Preset::Desk.unlearn().epochs.unwrap();
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let post = |m: &str, e: usize| {
                    r.sweep(m, e)
                        .unwrap_or_else(|| panic!("no sweep row for {m} at {e} epochs"))
                        .forget_ho_post
                };
                let (wd1, wdf) = (post("weight_distortion", 1), post("weight_distortion", full_epochs));
                let (cf1, cff) = (post("catastrophic_forgetting", 1), post("catastrophic_forgetting", full_epochs));
                (
                    (wd1 - wdf).abs() <= 0.10 && cf1 - cff >= 0.30,
                    format!("weight_distortion {wd1:.3} vs {wdf:.3}, catastrophic_forgetting {cf1:.3} vs {cff:.3}"),
                )
            })
            .collect(),
    );
    out.record("10 efficiency sweep", pass, detail);

    // 11. Reminder sources for SCRUB.
    let (pass, detail) = all_seeds(
        reports
            .iter()
            .map(|r| {
                let a = attack(r, "scrub", retain).recovery;
                let b = attack(r, "scrub", ReminderSource::HeldoutTest).recovery;
                (a > b, format!("retain {a:.3}, heldout test {b:.3}"))
            })
            .collect(),
    );
    out.record("11 reminder sources", pass, detail);

    // 12. Infrastructure.
    let (dir0, manifest0) = &manifests[0];
    let mut problems = Vec::new();
    let entry = &manifest0.stages[PRETRAINED];
    let path = dir0.join(entry.checkpoint.as_ref().unwrap());
    let (spec, ckpt) = load_checkpoint(&path).unwrap();
    let copy = root.join("roundtrip.ckpt");
    let lab = Lab::open(&desk(0), dir0).unwrap();
    assert_eq!(lab.net.spec(), &spec);
    save_checkpoint(&copy, &lab.net, &ckpt).unwrap();
    if fs::read(&copy).unwrap() != fs::read(&path).unwrap() || Some(ckpt.digest()) != entry.digest {
        problems.push("checkpoint round trip differs".to_string());
    }
    drop(lab);
    let rerun_dir = root.join("desk-seed0-rerun");
    let (_, _, _) = full_run(&desk(0), &rerun_dir);
    let (a, b) = (csv_files(dir0), csv_files(&rerun_dir));
    if a.is_empty() || a != b {
        problems.push(format!("rerun CSVs differ ({} vs {} files)", a.len(), b.len()));
    }
    for (dir, m) in &manifests {
        if m.failure.is_some() {
            problems.push(format!("{} recorded a failure", dir.display()));
        }
        if let Err(e) = m.verify(dir, &m.config_hash) {
            problems.push(e.to_string());
        }
        for (stage, e) in &m.stages {
            // Zero sweep epochs hand back the pretrained checkpoint without reading data.
            let untouched = stage == "init" || (stage.starts_with("sweep/") && stage.ends_with("/0"));
            if e.audited_ids == 0 && !untouched {
                problems.push(format!("{stage} has no audited reads"));
            }
        }
    }
    let slowest = times.iter().cloned().fold(0.0, f64::max);
    if slowest > RUN_BUDGET_SECS {
        problems.push(format!("slowest run took {slowest:.0}s"));
    }
    out.record(
        "12 infrastructure",
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} CSV files identical on rerun, slowest run {slowest:.0}s", a.len())
        } else {
            problems.join("; ")
        },
    );

    let failed: Vec<&str> = out.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!("{} of {} criteria pass", out.lines.len() - failed.len(), out.lines.len());
    if std::env::var_os("UNLEARNLAB_ACCEPTANCE_STRICT").is_some() {
        assert!(failed.is_empty(), "failed criteria: {failed:?}");
    }
}
