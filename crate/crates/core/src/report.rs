//! Static tables and SVG charts built from run artifacts.
//!
//! Every output is a pure function of the input files: no timestamps, fixed
//! float formatting, and ordered maps throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentManifest;
use crate::engine::{MANIFEST_FILE, METRICS_FILE};
use crate::error::{Error, Result};
use crate::evaluation::read_record;
use crate::experiment::{read_summary, run_name, Summary, EVALUATION_FILE, SUMMARY_JSON};
use crate::metrics_log::{read_metrics_log, MetricsRecord};
use crate::pruning::Granularity;
use crate::strategy::RecipeId;

/// Scalars drawn in loss-curve charts, when present.
pub const CURVE_SERIES: [&str; 8] = [
    "l_overall",
    "l_gc",
    "l_dc",
    "objective.generator",
    "objective.discriminator",
    "distill_out",
    "distill_mid",
    "sparsity",
];
const MAX_POINTS: usize = 400;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Files written by [`write_report`], relative to its output directory.
pub type ReportFiles = Vec<PathBuf>;

fn write(out: &Path, name: &str, text: &str, files: &mut ReportFiles) -> Result<()> {
    let p = out.join(name);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    files.push(PathBuf::from(name));
    Ok(())
}

/// Bucket means, so long runs stay readable.
fn downsample(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let per = points.len().div_ceil(MAX_POINTS);
    points
        .chunks(per)
        .map(|c| {
            let n = c.len() as f64;
            (c.iter().map(|p| p.0).sum::<f64>() / n, c.iter().map(|p| p.1).sum::<f64>() / n)
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    series: Vec<(String, Vec<(f64, f64)>)>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Panels stacked vertically, each with its own y range.
fn svg_chart(title: &str, panels: &[Panel<'_>]) -> String {
    let (w, ph, left, right, top) = (720.0, 200.0, 70.0, 20.0, 40.0);
    let gap = 50.0;
    let height = top + panels.len() as f64 * (ph + gap);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for (pi, panel) in panels.iter().enumerate() {
        let y0 = top + pi as f64 * (ph + gap);
        let (x_lo, x_hi) = bounds(panel.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
        let (y_lo, y_hi) = bounds(panel.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
        let pw = w - left - right;
        let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * pw;
        let sy = |y: f64| y0 + ph - (y - y_lo) / (y_hi - y_lo) * ph;
        let _ = writeln!(s, r##"<rect x="{left}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>"##);
        let _ = writeln!(s, r#"<text x="{left}" y="{}" font-size="12">{}</text>"#, y0 - 6.0, escape(panel.title));
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let yv = y_lo + f * (y_hi - y_lo);
            let xv = x_lo + f * (x_hi - x_lo);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 4.0, sy(yv) + 4.0, tick(yv));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), y0 + ph + 14.0, tick(xv));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, y0 + ph + 28.0, escape(panel.x_label));
        for (si, (name, points)) in panel.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = points
                .iter()
                .filter(|p| p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
            if points.len() <= 12 {
                for &(x, y) in points.iter().filter(|p| p.1.is_finite()) {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
                }
            }
            let ly = y0 + 14.0 + si as f64 * 14.0;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#, w - right - 6.0, escape(name));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Loss-curve chart of one metrics log: one panel per available series.
pub fn loss_curve_svg(title: &str, records: &[MetricsRecord]) -> String {
    let panels: Vec<Panel<'_>> = CURVE_SERIES
        .iter()
        .filter(|k| records.iter().any(|r| r.scalars.contains_key(**k)))
        .map(|k| {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter_map(|r| r.scalars.get(*k).map(|v| (r.step as f64, *v)))
                .collect();
            Panel {
                title: k,
                x_label: "step",
                series: vec![(k.to_string(), downsample(&pts))],
            }
        })
        .collect();
    svg_chart(title, &panels)
}

fn table1_csv(summary: &Summary) -> String {
    let mut s = String::from("recipe,granularity,target_sparsity,seeds,median_fid,median_dense_fid,median_relative_change\n");
    for g in &summary.groups {
        let _ = writeln!(
            s,
            "{},{},{:.2},{},{:.6},{:.6},{:.6}",
            g.recipe,
            g.granularity.map(|g| g.to_string()).unwrap_or_default(),
            g.target_sparsity,
            g.seeds,
            g.median_fid,
            g.median_dense_fid,
            g.median_relative_change
        );
    }
    s
}

/// `(sparsity, fid)` sweep of one recipe/granularity, with the dense
/// baseline as sparsity 0.
fn sweep(summary: &Summary, recipe: RecipeId, granularity: Granularity) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if let Some(d) = summary.groups.first() {
        out.push((0.0, d.median_dense_fid));
    }
    for g in summary.groups.iter().filter(|g| g.recipe == recipe && g.granularity == Some(granularity)) {
        out.push((g.target_sparsity, g.median_fid));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn sweep_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("sparsity,fid\n");
    for (sp, fid) in points {
        let _ = writeln!(s, "{sp:.2},{fid:.6}");
    }
    s
}

fn comparison_report(dir: &Path, out: &Path) -> Result<ReportFiles> {
    let summary = read_summary(dir)?;
    let mut files = Vec::new();
    write(out, "table1.csv", &table1_csv(&summary), &mut files)?;

    let mut pairs: Vec<(RecipeId, Granularity)> = Vec::new();
    for g in &summary.groups {
        if let Some(gr) = g.granularity {
            if !pairs.contains(&(g.recipe, gr)) {
                pairs.push((g.recipe, gr));
            }
        }
    }
    let main = pairs
        .iter()
        .copied()
        .find(|p| *p == (RecipeId::B, Granularity::Element))
        .or_else(|| pairs.first().copied());
    if let Some((r, g)) = main {
        write(out, "table2.csv", &sweep_csv(&sweep(&summary, r, g)), &mut files)?;
    }
    let mut long = String::from("recipe,granularity,sparsity,fid\n");
    let mut series = Vec::new();
    for &(r, g) in &pairs {
        let pts = sweep(&summary, r, g);
        for (sp, fid) in &pts {
            let _ = writeln!(long, "{r},{g},{sp:.2},{fid:.6}");
        }
        series.push((format!("{r} {g}"), pts));
    }
    write(out, "fid_vs_sparsity.csv", &long, &mut files)?;
    if !series.is_empty() {
        let chart = svg_chart(
            &format!("{} median FID vs sparsity ({})", summary.task, summary.extractor_id),
            &[Panel {
                title: "FID",
                x_label: "sparsity",
                series,
            }],
        );
        write(out, "fid_vs_sparsity.svg", &chart, &mut files)?;
    }

    let mut runs: BTreeMap<String, PathBuf> = BTreeMap::new();
    for row in &summary.rows {
        let key = format!("seed{}-{}", row.seed, run_name(row.recipe, row.granularity, row.target_sparsity));
        runs.entry(key).or_insert_with(|| row.run_dir.clone());
    }
    for (key, rel) in runs {
        let log = dir.join(&rel).join(METRICS_FILE);
        if log.exists() {
            let records = read_metrics_log(&log)?;
            write(out, &format!("curves/{key}.svg"), &loss_curve_svg(&key, &records), &mut files)?;
        }
    }
    Ok(files)
}

fn run_report(dir: &Path, out: &Path) -> Result<ReportFiles> {
    let manifest = ExperimentManifest::read(&dir.join(MANIFEST_FILE))?;
    let records = read_metrics_log(&dir.join(METRICS_FILE))?;
    let mut files = Vec::new();
    let title = format!("{} recipe {} seed {}", manifest.task.task_id, manifest.strategy.recipe_id, manifest.seed);
    write(out, "loss_curves.svg", &loss_curve_svg(&title, &records), &mut files)?;

    let mut last = String::from("scalar,value\n");
    if let Some(r) = records.last() {
        let _ = writeln!(last, "step,{}", r.step);
        for (k, v) in &r.scalars {
            let _ = writeln!(last, "{k},{v:.6}");
        }
    }
    write(out, "final_metrics.csv", &last, &mut files)?;

    let eval = dir.join(EVALUATION_FILE);
    if eval.exists() {
        let rec = read_record(&eval)?;
        let mut pts = Vec::new();
        if let Some(d) = rec.dense_fid {
            pts.push((0.0, d));
        }
        pts.push((rec.target_sparsity, rec.fid));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        write(out, "table2.csv", &sweep_csv(&pts), &mut files)?;
    }
    Ok(files)
}

/// Writes the report for a comparison directory (with `summary.json`) or a
/// single run directory (with `metrics.jsonl`).
pub fn write_report(dir: &Path, out: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if dir.join(SUMMARY_JSON).exists() {
        comparison_report(dir, out)
    } else if dir.join(METRICS_FILE).exists() {
        run_report(dir, out)
    } else {
        Err(Error::data(dir, format!("neither {SUMMARY_JSON} nor {METRICS_FILE} found")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, v: f64) -> MetricsRecord {
        MetricsRecord {
            step,
            scalars: [("l_overall".to_string(), v), ("sparsity".to_string(), 0.5)].into(),
            wall_time: step as f64,
        }
    }

    #[test]
    fn downsample_keeps_short_series_and_bounds_long_ones() {
        let short: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0)).collect();
        assert_eq!(downsample(&short), short);
        let long: Vec<(f64, f64)> = (0..1000).map(|i| (i as f64, i as f64)).collect();
        let d = downsample(&long);
        assert!(d.len() <= MAX_POINTS);
        assert_eq!(d[0], (1.0, 1.0));
    }

    #[test]
    fn loss_curve_svg_lists_present_series_only() {
        let records: Vec<MetricsRecord> = (0..50).map(|s| rec(s, 1.0 / (s + 1) as f64)).collect();
        let svg = loss_curve_svg("t", &records);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">l_overall<"));
        assert!(!svg.contains(">l_gc<"));
        assert_eq!(svg, loss_curve_svg("t", &records));
    }

    #[test]
    fn missing_inputs_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_report(dir.path(), &dir.path().join("r")).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Data);
    }
}
