//! CSV and static SVG artifacts for experiment runs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::evaluation::{sag_report_csv_header, sag_report_csv_row, sha256_hex, Regime};
use crate::experiment::{RegimeRun, SeedResult};
use crate::model::{write_checkpoint, TrainRecord};
use crate::sag::ClassGradientProfile;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_Y: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A fixed-size line chart: one polyline per series, axes labeled with
/// their min and max.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_Y + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, MARGIN_Y, MARGIN_Y + plot_h);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>
<text x="{x0}" y="{}" text-anchor="middle">{}</text>
<text x="{x1}" y="{}" text-anchor="middle">{}</text>
<text x="{}" y="{y1}" text-anchor="end">{}</text>
<text x="{}" y="{}" text-anchor="end">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        y1 + 16.0,
        fmt_label(x_min),
        y1 + 16.0,
        fmt_label(x_max),
        x0 - 6.0,
        fmt_label(y_min),
        x0 - 6.0,
        y0 + 4.0,
        fmt_label(y_max),
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 8.0,
        escape(x_label),
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_Y + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>
<text x="{}" y="{}">{}</text>"#,
            x1 + 10.0,
            ly - 4.0,
            x1 + 28.0,
            ly - 4.0,
            x1 + 32.0,
            ly,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Train and test loss per epoch.
pub fn loss_svg(title: &str, record: &TrainRecord) -> String {
    let pick = |f: fn(&crate::model::EpochRecord) -> f64| {
        record.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect()
    };
    line_chart_svg(
        title,
        "epoch",
        "cross-entropy",
        &[
            Series {
                name: "train loss".into(),
                points: pick(|e| e.train_loss),
            },
            Series {
                name: "test loss".into(),
                points: pick(|e| e.test_loss),
            },
        ],
    )
}

/// Point-shortcut score over time, one line per class.
pub fn delta_svg(title: &str, profile: &ClassGradientProfile) -> String {
    let series: Vec<Series> = profile
        .delta()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(c, row)| Series {
            name: format!("class {c}"),
            points: row.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect(),
        })
        .collect();
    line_chart_svg(title, "time step", "|class-mean input gradient|", &series)
}

/// Directory name used for a regime's artifacts.
pub fn regime_dir(regime: Regime) -> &'static str {
    match regime {
        Regime::Regular => "clean",
        Regime::Shortcut => "shortcut",
    }
}

pub const RUN_FILES: [&str; 5] = [
    "train_record.csv",
    "sag_report.csv",
    "delta_profile.csv",
    "loss.svg",
    "delta.svg",
];

/// Renders every artifact of one regime run as `(file name, contents)`.
pub fn regime_artifacts(dataset: &str, seed: u64, run: &RegimeRun) -> Vec<(&'static str, String)> {
    let label = format!("{dataset} seed {seed} ({})", regime_dir(run.regime));
    let report_csv = format!(
        "{}\n{}\n",
        sag_report_csv_header(run.report.sag.len()),
        sag_report_csv_row(dataset, run.regime, &run.report)
    );
    vec![
        ("train_record.csv", run.record.to_csv()),
        ("sag_report.csv", report_csv),
        ("delta_profile.csv", run.profile.to_csv()),
        ("loss.svg", loss_svg(&format!("Loss: {label}"), &run.record)),
        ("delta.svg", delta_svg(&format!("Point-shortcut score: {label}"), &run.profile)),
    ]
}

/// Directory of one regime run, relative to the output root.
pub fn run_dir(seed: u64, regime: Regime) -> PathBuf {
    PathBuf::from(format!("seed_{seed}")).join(regime_dir(regime))
}

/// Writes one regime's artifacts (plus `model.ckpt` when `checkpoint` is
/// set) and returns `(path relative to out, sha256)` for each file.
pub fn write_regime_outputs(
    out: &Path,
    dataset: &str,
    seed: u64,
    run: &RegimeRun,
    checkpoint: bool,
) -> io::Result<Vec<(PathBuf, String)>> {
    let rel_dir = run_dir(seed, run.regime);
    fs::create_dir_all(out.join(&rel_dir))?;
    let mut files: Vec<(&str, Vec<u8>)> = regime_artifacts(dataset, seed, run)
        .into_iter()
        .map(|(name, text)| (name, text.into_bytes()))
        .collect();
    if checkpoint {
        let mut bytes = Vec::new();
        write_checkpoint(&run.model, &mut bytes).map_err(io::Error::other)?;
        files.push(("model.ckpt", bytes));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let rel = rel_dir.join(name);
        fs::write(out.join(&rel), &bytes)?;
        written.push((rel, sha256_hex(&bytes)));
    }
    Ok(written)
}

/// Both regimes of one seed under `seed_<seed>/{clean,shortcut}/`.
pub fn write_seed_outputs(out: &Path, result: &SeedResult, checkpoint: bool) -> io::Result<Vec<(PathBuf, String)>> {
    let mut written = Vec::new();
    for regime in Regime::ALL {
        written.extend(write_regime_outputs(out, &result.dataset, result.seed, result.run(regime), checkpoint)?);
    }
    Ok(written)
}

pub const SUMMARY_HEADER: &str = "seed,regime,final_train_acc,final_test_acc,final_train_loss,final_test_loss,max_sag,detected,detected_class,delta_peak_t";

/// One row per (seed, regime), sorted by seed then regime.
pub fn summary_csv(results: &[SeedResult]) -> String {
    let mut sorted: Vec<&SeedResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in sorted {
        let target = r
            .shortcut
            .receipt
            .as_ref()
            .map_or(0, |rc| rc.spec.target_class);
        for regime in Regime::ALL {
            let run = r.run(regime);
            let last = run.record.last();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                regime,
                last.map_or(f64::NAN, |e| e.train_accuracy),
                last.map_or(f64::NAN, |e| e.test_accuracy),
                last.map_or(f64::NAN, |e| e.train_loss),
                last.map_or(f64::NAN, |e| e.test_loss),
                run.report.max_score(),
                u8::from(run.report.detected),
                run.report.detected_class.map(|c| c.to_string()).unwrap_or_default(),
                run.peak_time(target)
            );
        }
    }
    out
}

/// `path,sha256` for every written file, sorted by path.
pub fn manifest_csv(mut entries: Vec<(PathBuf, String)>) -> String {
    entries.sort();
    let mut out = String::from("path,sha256\n");
    for (p, h) in entries {
        let _ = writeln!(out, "{},{h}", p.to_string_lossy().replace('\\', "/"));
    }
    out
}
