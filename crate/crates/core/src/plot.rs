//! SVG charts for reports and sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::pipeline::{PipelineError, Report, SweepRow};

const SIZE: (u32, u32) = (800, 500);

fn plot_err<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Plot(e.to_string())
}

fn bars(path: &Path, title: &str, y_desc: &str, values: &[(String, f64)]) -> Result<(), PipelineError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let top = values.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let n = values.len().max(1);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..n as f64, 0f64..top)
        .map_err(plot_err)?;
    let labels: Vec<String> = values.iter().map(|(l, _)| l.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.min(30))
        .x_label_formatter(&|x| {
            let k = x.floor() as usize;
            labels.get(k).cloned().unwrap_or_default()
        })
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(k, (_, v))| {
            Rectangle::new([(k as f64 + 0.1, 0.0), (k as f64 + 0.9, *v)], BLUE.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn lines(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &BTreeMap<String, Vec<(f64, f64)>>,
) -> Result<(), PipelineError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let y1 = if y1 > 0.0 { y1 * 1.1 } else { 1.0 };
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, 0f64..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (k, (name, data)) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(data.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Rules per switch and per-link estimates (or errors when known).
pub fn report_plots(report: &Report, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let rules = out.join("rules_per_switch.svg");
    let values: Vec<(String, f64)> = report
        .rules
        .per_switch
        .iter()
        .map(|(s, n)| (s.clone(), *n as f64))
        .collect();
    bars(&rules, "Monitoring rules per switch", "entries", &values)?;

    let links = out.join("link_delays.svg");
    let with_truth = report.links.iter().all(|l| l.abs_error_ms.is_some()) && !report.links.is_empty();
    let values: Vec<(String, f64)> = report
        .links
        .iter()
        .map(|l| {
            let v = if with_truth {
                l.abs_error_ms.unwrap_or(0.0)
            } else {
                l.estimated_delay_ms
            };
            (l.link.clone(), v)
        })
        .collect();
    if with_truth {
        bars(&links, "Absolute error per link", "ms", &values)?;
    } else {
        bars(&links, "Estimated delay per link", "ms", &values)?;
    }
    Ok(vec![rules, links])
}

/// Coverage against hop cap, error and rule load against monitor count.
pub fn sweep_plots(rows: &[SweepRow], out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut coverage: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_monitors: BTreeMap<usize, &SweepRow> = BTreeMap::new();
    for r in rows {
        coverage
            .entry(format!("{:>3} monitors", r.monitors))
            .or_default()
            .push((r.mlmf as f64, r.coverage));
        // largest hop cap per monitor count
        let e = by_monitors.entry(r.monitors).or_insert(r);
        if r.mlmf > e.mlmf {
            *e = r;
        }
    }
    let cov = out.join("coverage_vs_mlmf.svg");
    lines(&cov, "Coverage", "max flow length (hops)", "coverage", &coverage)?;

    let mut errors: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rules: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (&k, r) in &by_monitors {
        if let (Some(m), Some(x)) = (r.mean_abs_error_ms, r.max_abs_error_ms) {
            errors.entry("mean".into()).or_default().push((k as f64, m));
            errors.entry("max".into()).or_default().push((k as f64, x));
        }
        rules
            .entry("average".into())
            .or_default()
            .push((k as f64, r.avg_rules_per_switch));
    }
    let err = out.join("error_vs_monitors.svg");
    lines(&err, "Link delay error", "monitor nodes", "ms", &errors)?;
    let rp = out.join("rules_vs_monitors.svg");
    lines(&rp, "Rules per switch", "monitor nodes", "entries", &rules)?;
    Ok(vec![cov, err, rp])
}
