//! Minimal SVG rendering for training curves and confusion-matrix grids.

use std::fmt::Write;

use chestxr::metrics::{LabelMetrics, MetricsReport};
use chestxr::train::EpochLog;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 36.0;

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    (x0, x1, y0 - pad, y1 + pad)
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| ox + MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"##,
        ox + MARGIN_L + pw / 2.0,
        oy + 18.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        ox + MARGIN_L,
        oy + MARGIN_T
    );
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{y:.3}</text>"##,
            ox + MARGIN_L,
            sy(y),
            ox + MARGIN_L + pw,
            sy(y),
            ox + MARGIN_L - 4.0,
            sy(y) + 3.0
        );
    }
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{x:.0}</text>"##,
            sx(x),
            oy + MARGIN_T + ph + 14.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">epoch</text>"##,
        ox + MARGIN_L + pw / 2.0,
        oy + PANEL_H - 6.0
    );
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r##"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"##,
                pts.join(" ")
            );
        }
        let ly = oy + MARGIN_T + 12.0 + 14.0 * i as f64;
        let lx = ox + MARGIN_L + pw - 110.0;
        let _ = writeln!(
            out,
            r##"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"##,
            ly - 3.0,
            lx + 16.0,
            ly - 3.0,
            lx + 20.0,
            ly,
            esc(&s.name)
        );
    }
}

/// Panels laid out left to right, wrapping after `cols`.
pub fn panels_svg(panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let w = PANEL_W * cols.min(panels.len().max(1)) as f64;
    let h = PANEL_H * rows as f64;
    let mut out = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"##
    );
    out.push('\n');
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(
            &mut out,
            p,
            PANEL_W * (i % cols) as f64,
            PANEL_H * (i / cols) as f64,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Loss, AUROC, accuracy and F1 against epoch, one line per run.
pub fn training_curves(runs: &[(String, Vec<EpochLog>)]) -> String {
    let series = |f: &dyn Fn(&EpochLog) -> Option<f64>| -> Vec<Series> {
        runs.iter()
            .map(|(name, logs)| Series {
                name: name.clone(),
                points: logs
                    .iter()
                    .filter_map(|l| f(l).map(|v| (l.epoch as f64, v)))
                    .collect(),
            })
            .collect()
    };
    let mut loss = series(&|l| Some(l.train_loss));
    for s in &mut loss {
        s.name = format!("{} train", s.name);
    }
    for mut s in series(&|l| Some(l.val_loss)) {
        s.name = format!("{} val", s.name);
        loss.push(s);
    }
    let panels = [
        Panel {
            title: "Loss".into(),
            series: loss,
        },
        Panel {
            title: "Validation AUROC".into(),
            series: series(&|l| Some(l.val_auroc)),
        },
        Panel {
            title: "Validation accuracy".into(),
            series: series(&|l| Some(l.val_accuracy)),
        },
        Panel {
            title: "Validation F1".into(),
            series: series(&|l| Some(l.val_f1)),
        },
    ];
    panels_svg(&panels, 2)
}

const CELL: f64 = 56.0;
const CM_W: f64 = 2.0 * CELL + 70.0;
const CM_H: f64 = 2.0 * CELL + 70.0;

fn confusion_panel(out: &mut String, m: &LabelMetrics, ox: f64, oy: f64) {
    let c = &m.confusion;
    let max = [c.tn, c.fp, c.fn_, c.tp]
        .into_iter()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##,
        ox + 50.0 + CELL,
        oy + 16.0,
        esc(&m.label)
    );
    // rows: true 0, true 1; columns: predicted 0, predicted 1
    let cells = [[c.tn, c.fp], [c.fn_, c.tp]];
    for (r, row) in cells.iter().enumerate() {
        for (col, &v) in row.iter().enumerate() {
            let x = ox + 50.0 + CELL * col as f64;
            let y = oy + 26.0 + CELL * r as f64;
            let shade = 255.0 - 200.0 * v as f64 / max;
            let text = if shade < 140.0 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{CELL:.1}" height="{CELL:.1}" fill="rgb({g:.0},{g:.0},255)" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle" fill="{text}">{v}</text>"##,
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0,
                g = shade
            );
        }
    }
    for (i, t) in ["0", "1"].iter().enumerate() {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{t}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{t}</text>"##,
            ox + 50.0 + CELL * (i as f64 + 0.5),
            oy + 26.0 + 2.0 * CELL + 12.0,
            ox + 46.0,
            oy + 26.0 + CELL * (i as f64 + 0.5) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">predicted</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">true</text>"##,
        ox + 50.0 + CELL,
        oy + 26.0 + 2.0 * CELL + 24.0,
        ox + 30.0,
        oy + 26.0 + CELL,
        ox + 30.0,
        oy + 26.0 + CELL
    );
}

/// One 2x2 confusion matrix per label, four panels per row.
pub fn confusion_grid(report: &MetricsReport) -> String {
    let cols = 4;
    let rows = report.per_label.len().div_ceil(cols).max(1);
    let w = CM_W * cols as f64;
    let h = CM_H * rows as f64 + 30.0;
    let mut out = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"##
    );
    out.push('\n');
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="20" font-size="15" text-anchor="middle">Confusion matrices: {}</text>"##,
        w / 2.0,
        esc(&report.model_name)
    );
    for (i, m) in report.per_label.iter().enumerate() {
        confusion_panel(
            &mut out,
            m,
            CM_W * (i % cols) as f64,
            30.0 + CM_H * (i / cols) as f64,
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(epoch: usize, v: f64) -> EpochLog {
        EpochLog {
            epoch,
            train_loss: v,
            train_auroc: None,
            val_loss: v,
            val_auroc: v,
            val_accuracy: v,
            val_f1: v,
            lr: 1e-3,
        }
    }

    #[test]
    fn curves_are_deterministic_svg() {
        let runs = vec![("CustomNet".to_string(), vec![log(1, 0.7), log(2, 0.5)])];
        let a = training_curves(&runs);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 5);
        assert_eq!(a, training_curves(&runs));
    }

    #[test]
    fn single_point_series_render() {
        let runs = vec![("A<B".to_string(), vec![log(1, 0.7)])];
        let svg = training_curves(&runs);
        assert!(svg.contains("A&lt;B"));
        assert!(!svg.contains("NaN"));
    }
}
