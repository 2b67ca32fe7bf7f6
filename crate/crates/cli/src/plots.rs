//! Static SVG figures rendered from a run report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoeval_core::model::Transform;

use crate::error::CliError;
use crate::report::{RunReport, TargetReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Plot area mapping data ranges onto the canvas.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    s
}

fn axes(s: &mut String, f: &Frame, x_ticks: bool) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = f.y.0 + (f.y.1 - f.y.0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick(v));
        if x_ticks {
            let v = f.x.0 + (f.x.1 - f.x.0) * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.px(v), y0 + 16.0, tick(v));
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Observed against predicted with a 1:1 line, on the model's transform scale.
pub fn obs_pred_svg(t: &TargetReport) -> Option<String> {
    if t.oof_predictions.is_empty() {
        return None;
    }
    let scale = |v: f64| match t.transform {
        Transform::Log1p if v > -1.0 => v.ln_1p(),
        _ => v,
    };
    let series = [("#1f77b4", &t.oof_predictions), ("#d62728", &t.test_predictions)];
    let all = series.iter().flat_map(|(_, pts)| pts.iter()).flat_map(|p| [scale(p.observed), scale(p.predicted)]);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let r = padded(lo, hi);
    let f = Frame { x: r, y: r };
    let suffix = if t.transform == Transform::Log1p { " (log1p)" } else { "" };
    let mut s = open(
        &format!("{}: observed vs predicted", t.target),
        &format!("observed{suffix}"),
        &format!("predicted{suffix}"),
    );
    axes(&mut s, &f, true);
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        f.px(r.0),
        f.py(r.0),
        f.px(r.1),
        f.py(r.1)
    );
    for (color, pts) in series {
        for p in pts.iter() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.5"/>"#,
                f.px(scale(p.observed)),
                f.py(scale(p.predicted))
            );
        }
    }
    let _ = writeln!(s, r##"<text x="{}" y="{}" fill="#1f77b4">OOF</text>"##, MARGIN + 10.0, MARGIN + 10.0);
    if !t.test_predictions.is_empty() {
        let _ = writeln!(s, r##"<text x="{}" y="{}" fill="#d62728">test</text>"##, MARGIN + 10.0, MARGIN + 26.0);
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Selection probability of ranked features with the threshold marked.
pub fn stability_svg(t: &TargetReport) -> Option<String> {
    let st = t.stability.as_ref()?;
    if st.report.ranked.is_empty() {
        return None;
    }
    let n = st.report.ranked.len();
    let f = Frame { x: (0.0, n as f64 + 1.0), y: (0.0, 1.05) };
    let mut s = open(&format!("{}: stability scores", t.target), "feature rank", "selection probability");
    axes(&mut s, &f, true);
    let path: Vec<String> = st
        .report
        .ranked
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{:.1} {:.1}", f.px(i as f64 + 1.0), f.py(r.pi)))
        .collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4"/>"##, path.join(" "));
    let y = f.py(st.report.threshold);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="red" stroke-dasharray="5 3"/>"#,
        WIDTH - MARGIN
    );
    s.push_str("</svg>\n");
    Some(s)
}

fn bars_svg(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let lo = bars.iter().map(|b| b.1).fold(0.0, f64::min);
    let f = Frame { x: (0.0, bars.len() as f64), y: padded(lo, if hi > lo { hi } else { lo + 1.0 }) };
    let mut s = open(title, "", ylabel);
    axes(&mut s, &f, false);
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = f.px(i as f64) + 0.15 * slot;
        let (top, bottom) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#2ca02c"/>"##,
            0.7 * slot,
            bottom - top
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + 0.35 * slot,
            HEIGHT - MARGIN + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn oof_rows<'a>(t: &'a TargetReport, dimension: &'a str) -> impl Iterator<Item = &'a geoeval_core::metrics::MetricsRow> {
    t.metrics.iter().filter(move |r| r.label.scope == "oof" && r.label.dimension == dimension)
}

pub fn stratum_nrmse_svg(t: &TargetReport) -> Option<String> {
    let bars: Vec<(String, f64)> =
        oof_rows(t, "stratum").filter_map(|r| r.nrmse_minmax.map(|v| (r.label.group.clone(), v))).collect();
    (!bars.is_empty()).then(|| bars_svg(&format!("{}: NRMSE by stratum (OOF)", t.target), "NRMSE (min-max)", &bars))
}

pub fn depth_ccc_svg(t: &TargetReport) -> Option<String> {
    let bars: Vec<(String, f64)> =
        oof_rows(t, "depth").filter_map(|r| r.ccc_log1p.or(r.ccc).map(|v| (r.label.group.clone(), v))).collect();
    (!bars.is_empty()).then(|| bars_svg(&format!("{}: CCC by depth (OOF)", t.target), "CCC", &bars))
}

/// Writes every available figure under `dir`; missing sections are skipped with a warning.
pub fn emit_plots(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &report.targets {
        let figures: [(&str, Render); 4] = [
            ("obs_pred", obs_pred_svg),
            ("stability", stability_svg),
            ("stratum_nrmse", stratum_nrmse_svg),
            ("depth_ccc", depth_ccc_svg),
        ];
        for (name, render) in figures {
            match render(t) {
                Some(svg) => {
                    let path = dir.join(format!("{}_{name}.svg", sanitize(&t.target)));
                    std::fs::write(&path, svg)?;
                    written.push(path);
                }
                None => log::warn!("{}: no data for the {name} plot, skipped", t.target),
            }
        }
    }
    Ok(written)
}

type Render = fn(&TargetReport) -> Option<String>;

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}
