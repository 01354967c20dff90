//! Precision-recall curves as a standalone SVG.

use std::fmt::Write;

use cdsm_core::evaluator::{AssociationKind, AssociationSpec, EvalReport};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// `IOU20`, `DIST2` style name of an association rule.
pub fn spec_label(spec: &AssociationSpec) -> String {
    match spec.kind {
        AssociationKind::Iou2d => format!("IOU{}", (spec.threshold * 100.0).round()),
        AssociationKind::Dist3d { .. } => format!("DIST{}", spec.threshold),
    }
}

pub fn pr_curve_svg(title: &str, report: &EvalReport) -> String {
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let x = |r: f64| MARGIN + r * pw;
    let y = |p: f64| H - MARGIN - p * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.2}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#,
            x(t),
            H - MARGIN + 14.0,
            MARGIN - 4.0,
            y(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">recall</text><text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">precision</text>"#,
        W / 2.0,
        H - 10.0,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for (i, r) in report.results.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = r
            .curve
            .recall
            .iter()
            .zip(&r.curve.precision)
            .map(|(&rc, &p)| format!("{:.2},{:.2}", x(rc), y(p)))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                points.join(" ")
            );
        }
        let ap = if r.undefined {
            "undefined".to_string()
        } else {
            format!("{:.3}", r.ap)
        };
        let ly = MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{} AP {ap}</text>"#,
            W - MARGIN - 6.0,
            spec_label(&r.spec)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
