use unlearnlab::plots::emit_plots;
use unlearnlab::report::*;
use unlearnlab_core::attack::ReminderSource;
use unlearnlab_core::train::MetricsRecord;

fn stream(steps: &[u64], acc: impl Fn(usize) -> f64) -> Vec<MetricsRecord> {
    steps
        .iter()
        .enumerate()
        .map(|(i, &step)| MetricsRecord {
            phase: "r".into(),
            step,
            test_acc: Some(acc(i)),
            forget_ho_acc: Some(1.0 - acc(i)),
            train_loss: 0.0,
            lr: 1e-3,
        })
        .collect()
}

#[test]
fn constant_stream_averages_to_constant() {
    let s = stream(&[10, 20, 30, 40, 50, 60, 70], |_| 0.625);
    let w = window_mean(&s, 5, 10).unwrap();
    assert_eq!(w.test_acc, 0.625);
    assert_eq!(w.forget_ho_acc, 0.375);
    assert!(!w.short_window);
}

#[test]
fn short_streams_are_flagged() {
    let s = stream(&[10, 20, 30], |i| i as f64);
    let w = window_mean(&s, 5, 10).unwrap();
    assert!(w.short_window);
    assert_eq!(w.records, 3);
    assert_eq!(w.test_acc, 1.0);
    assert!(window_mean(&[], 5, 10).is_none());
}

#[test]
fn ten_record_hand_computation() {
    // Steps 10..100, accuracies 0.1..1.0: the window covers 0.6..1.0.
    let steps: Vec<u64> = (1..=10).map(|i| i * 10).collect();
    let s = stream(&steps, |i| (i + 1) as f64 / 10.0);
    let w = window_mean(&s, 5, 10).unwrap();
    assert!((w.test_acc - 0.8).abs() < 1e-12);
    assert_eq!(w.records, 5);
    // An off-cadence final record joins the window.
    let mut steps2 = steps.clone();
    steps2.push(104);
    let s2 = stream(&steps2, |i| (i + 1) as f64 / 10.0);
    let w2 = window_mean(&s2, 5, 10).unwrap();
    assert_eq!(w2.records, 6);
    assert!((w2.test_acc - (0.6 + 0.7 + 0.8 + 0.9 + 1.0 + 1.1) / 6.0).abs() < 1e-12);
}

#[test]
fn scatter_rows_follow_input_order() {
    let a = stream(&[10, 20], |_| 0.5);
    let b = stream(&[10, 20, 30, 40, 50, 60], |_| 0.25);
    let rows = aggregate_scatter(
        [
            ("scrub", 0, ReminderSource::Retain, a.as_slice()),
            ("ssd", 10, ReminderSource::HeldoutTest, b.as_slice()),
        ],
        5,
        10,
    );
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].method.as_str(), rows[0].short_window), ("scrub", true));
    assert_eq!((rows[1].n_relearn, rows[1].mean_test_acc, rows[1].short_window), (10, 0.25, false));
}

fn row(method: &str, n: usize, source: ReminderSource) -> ScatterRow {
    ScatterRow {
        method: method.into(),
        n_relearn: n,
        source,
        mean_test_acc: 0.9,
        mean_forget_ho_acc: 0.3,
        records: 5,
        short_window: false,
    }
}

#[test]
fn plots_are_deterministic_and_complete() {
    let empty = emit_plots(&Report::default()).unwrap();
    let scatter = &empty.iter().find(|(n, _)| n == "scatter").unwrap().1;
    assert!(scatter.starts_with("<?xml") && scatter.contains("<svg ") && scatter.ends_with("</svg>"));
    assert!(scatter.contains("<line"), "axes expected");
    assert!(!scatter.contains("<circle"));

    let mut report = Report::default();
    for m in ["scrub", "ssd", "retrain"] {
        for n in [0, 10] {
            for s in [ReminderSource::Retain, ReminderSource::HeldoutTest] {
                report.scatter.push(row(m, n, s));
            }
        }
    }
    let a = emit_plots(&report).unwrap();
    let b = emit_plots(&report).unwrap();
    assert_eq!(a, b);
    let scatter = &a.iter().find(|(n, _)| n == "scatter").unwrap().1;
    assert_eq!(scatter.matches("<circle").count(), 3 * 2 * 2);

    report.barriers.push(BarrierRow {
        from: "pretrained".into(),
        to: "scrub".into(),
        barrier: 0.1,
    });
    match emit_plots(&report) {
        Err(unlearnlab::LabError::MissingSeries(m)) => assert!(m.contains("scrub")),
        other => panic!("expected a missing series error, got {other:?}"),
    }
}
