//! Static SVG charts for ranking and joined reports. Drops are clamped to
//! `[0, 1]` for display only.

use std::fmt::Write;

use super::report::{JoinedReport, LayerDropRanking};

const W: f64 = 640.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{cx}" y="20" text-anchor="middle" font-size="14">{title}</text>
<line x1="{MARGIN}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{bottom}" stroke="black"/>
<text x="{cx}" y="{xl}" text-anchor="middle">{x_label}</text>
<text x="14" y="{cy}" text-anchor="middle" transform="rotate(-90 14 {cy})">{y_label}</text>
"#,
        cx = W / 2.0,
        cy = H / 2.0,
        bottom = H - MARGIN,
        right = W - MARGIN / 2.0,
        xl = H - 12.0,
        title = escape(title),
        x_label = escape(x_label),
        y_label = escape(y_label),
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{ty}" text-anchor="end" font-size="10">{tick}</text><line x1="{MARGIN}" y1="{y}" x2="{r}" y2="{y}" stroke="lightgray"/>"#,
            x = MARGIN - 4.0,
            ty = y + 3.0,
            r = W - MARGIN / 2.0,
        );
    }
}

fn y_of(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    (H - MARGIN) - v * (H - 2.0 * MARGIN)
}

/// Max-drop per unit in ranking order.
pub fn sorted_drop_svg(ranking: &LayerDropRanking) -> String {
    let mut out = String::new();
    frame(
        &mut out,
        &format!("Max category accuracy drop, layer {}", ranking.layer.name),
        "units (sorted)",
        "max drop",
    );
    let n = ranking.entries.len().max(1);
    let span = W - 1.5 * MARGIN;
    let points: Vec<String> = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let x = MARGIN + span * (i as f64 + 0.5) / n as f64;
            format!("{x:.2},{:.2}", y_of(e.max_drop))
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    out.push_str("</svg>\n");
    out
}

/// One bar per unit, labeled with its unit index and top concept.
pub fn drop_panels_svg(joined: &JoinedReport, class_names: &[String]) -> String {
    let mut out = String::new();
    frame(&mut out, &format!("Unit ablation, layer {}", joined.layer), "unit", "max drop");
    let n = joined.entries.len().max(1);
    let slot = (W - 1.5 * MARGIN) / n as f64;
    for (i, e) in joined.entries.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let y = y_of(e.max_drop);
        let concept = e
            .concepts
            .as_ref()
            .and_then(|c| c.first().cloned())
            .unwrap_or_else(|| "no explanation".into());
        let class = class_names.get(e.argmax_class).cloned().unwrap_or_else(|| e.argmax_class.to_string());
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="indianred"><title>unit {u}: {concept} (drop {d:.3} on {class})</title></rect>"#,
            w = slot * 0.7,
            h = (H - MARGIN) - y,
            u = e.unit,
            concept = escape(&concept),
            d = e.max_drop,
            class = escape(&class),
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{ty:.2}" text-anchor="middle" font-size="10">{u}</text>"#,
            cx = x + slot * 0.35,
            ty = H - MARGIN + 12.0,
            u = e.unit,
        );
    }
    out.push_str("</svg>\n");
    out
}
