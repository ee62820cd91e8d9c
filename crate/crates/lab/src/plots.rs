use std::collections::BTreeSet;

use unlearnlab_core::plot::{bar_chart, line_plot, scatter_panels, Series};

use crate::error::{LabError, Result};
use crate::report::{source_name, Report};

/// Renders the report's figures as (name, SVG) pairs in a fixed order.
pub fn emit_plots(report: &Report) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();

    let sizes: BTreeSet<usize> = report.scatter.iter().map(|r| r.n_relearn).collect();
    let mut methods: Vec<&str> = Vec::new();
    for r in &report.scatter {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let panels: Vec<(String, Vec<Series>)> = sizes
        .iter()
        .map(|&n| {
            let series = methods
                .iter()
                .map(|&m| Series {
                    name: m.to_string(),
                    points: report
                        .scatter
                        .iter()
                        .filter(|r| r.n_relearn == n && r.method == m)
                        .map(|r| (r.mean_test_acc, r.mean_forget_ho_acc))
                        .collect(),
                })
                .collect();
            (format!("n_relearn = {n}"), series)
        })
        .collect();
    out.push((
        "scatter".to_string(),
        scatter_panels("After relearning", "test accuracy", "forget-holdout accuracy", &panels),
    ));

    for b in &report.barriers {
        if !report.lmc.iter().any(|c| c.from == b.from && c.to == b.to) {
            return Err(LabError::MissingSeries(format!("lmc curve {} to {}", b.from, b.to)));
        }
    }
    let curves: Vec<Series> = report
        .lmc
        .iter()
        .map(|c| Series {
            name: c.to.clone(),
            points: c.points.iter().map(|p| (p.alpha, p.test_acc)).collect(),
        })
        .collect();
    out.push((
        "lmc".to_string(),
        line_plot("Interpolation from the pretrained model", "alpha", "test accuracy", &curves),
    ));

    for (m, _) in &report.distances {
        if report.model(m).is_none() {
            return Err(LabError::MissingSeries(format!("distance for unknown model {m}")));
        }
    }
    out.push((
        "distance".to_string(),
        bar_chart("L2 distance from the pretrained model", "L2 distance", &report.distances),
    ));

    if !report.sweep.is_empty() {
        let mut names: Vec<&str> = Vec::new();
        for r in &report.sweep {
            if !names.contains(&r.method.as_str()) {
                names.push(&r.method);
            }
        }
        let series: Vec<Series> = names
            .iter()
            .map(|&m| Series {
                name: m.to_string(),
                points: report
                    .sweep
                    .iter()
                    .filter(|r| r.method == m)
                    .map(|r| (r.epochs as f64, r.forget_ho_post))
                    .collect(),
            })
            .collect();
        out.push((
            "sweep".to_string(),
            line_plot("Unlearning budget", "unlearning epochs", "forget-holdout accuracy after relearning", &series),
        ));
    }

    if !report.attacks.is_empty() {
        let bars: Vec<(String, f64)> = report
            .attacks
            .iter()
            .filter(|a| a.n_relearn == 0 && source_name(a.source) == "retain")
            .map(|a| (a.method.clone(), a.recovery))
            .collect();
        out.push((
            "recovery".to_string(),
            bar_chart("Recovery under retain-set relearning", "forget-holdout recovery", &bars),
        ));
    }
    Ok(out)
}
