use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{read_metrics, MetricsFile};
use crate::error::{Error, Result};
use crate::eval::mean_std;

/// Evaluation return per round of one algorithm, aggregated over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub rounds: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn aggregate_curves(files: &[MetricsFile]) -> Vec<Curve> {
    let mut by_algo: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for f in files {
        for row in &f.rows {
            by_algo.entry(&row.algorithm).or_default().entry(row.round).or_default().push(row.eval_mean);
        }
    }
    by_algo
        .into_iter()
        .map(|(algo, rounds)| {
            let mut curve = Curve { algorithm: algo.to_string(), rounds: vec![], mean: vec![], std: vec![] };
            for (round, values) in rounds {
                let (m, s) = mean_std(&values);
                curve.rounds.push(round);
                curve.mean.push(m);
                curve.std.push(s);
            }
            curve
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub fn render_svg(curves: &[Curve]) -> String {
    let (w, h, margin) = (720.0, 440.0, 60.0);
    let rounds = curves.iter().flat_map(|c| c.rounds.iter().copied());
    let (r_min, r_max) = rounds.fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let lows = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m - s));
    let highs = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std).map(|(m, s)| m + s));
    let mut y_min = lows.fold(f64::INFINITY, f64::min);
    let mut y_max = highs.fold(f64::NEG_INFINITY, f64::max);
    if !(y_max > y_min) {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let span_r = (r_max.saturating_sub(r_min)).max(1) as f64;
    let x = |r: usize| margin + (r - r_min) as f64 / span_r * (w - 2.0 * margin);
    let y = |v: f64| h - margin - (v - y_min) / (y_max - y_min) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        m = margin,
        t = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">round</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {})">evaluation return</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (label, v) in [("min", y_min), ("max", y_max)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="11" class="{label}">{:.1}</text>"#,
            margin - 4.0,
            y(v),
            v
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = c.rounds.iter().zip(c.mean.iter().zip(&c.std)).map(|(&r, (m, s))| format!("{:.3},{:.3}", x(r), y(m + s))).collect();
        let lower: Vec<String> = c.rounds.iter().zip(c.mean.iter().zip(&c.std)).rev().map(|(&r, (m, s))| format!("{:.3},{:.3}", x(r), y(m - s))).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = c.rounds.iter().zip(&c.mean).map(|(&r, &m)| format!("{:.3},{:.3}", x(r), y(m))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2" data-algorithm="{}"/>"#,
            line.join(" "),
            c.algorithm
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            w - margin - 110.0,
            margin + 16.0 * i as f64,
            c.algorithm
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders mean +/- std evaluation curves of the given metrics files.
pub fn emit_plot(inputs: &[&Path], output: &Path) -> Result<Vec<Curve>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no metrics files to plot".into()));
    }
    let files = inputs.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>>>()?;
    let curves = aggregate_curves(&files);
    std::fs::write(output, render_svg(&curves)).map_err(|e| Error::io(output, e))?;
    Ok(curves)
}
