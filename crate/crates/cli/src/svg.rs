//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn frame(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_max: f64) {
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - PAD, W - PAD, H - PAD);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{y_max:.4}</text>"#,
        PAD - 4.0,
        PAD + 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">0</text>"#,
        PAD - 4.0,
        H - PAD
    );
}

/// One polyline per series over shared x labels.
pub fn line_chart(title: &str, x_label: &str, xs: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let mut s = frame(title);
    let y_max = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0f64, f64::max).max(1e-12);
    axes(&mut s, x_label, y_max);
    let step = if xs.len() > 1 { (W - 2.0 * PAD) / (xs.len() - 1) as f64 } else { 0.0 };
    for (i, x) in xs.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            PAD + step * i as f64,
            H - PAD + 16.0,
            escape(x)
        );
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{:.1},{:.1}", PAD + step * i as f64, H - PAD - (H - 2.0 * PAD) * y / y_max))
            .collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn bar_chart(title: &str, x_label: &str, labels: &[String], values: &[f64]) -> String {
    let mut s = frame(title);
    let y_max = values.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    axes(&mut s, x_label, y_max);
    let slot = (W - 2.0 * PAD) / values.len().max(1) as f64;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let h = (H - 2.0 * PAD) * v / y_max;
        let x = PAD + slot * i as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#4c72b0"/>"##,
            x + slot * 0.1,
            H - PAD - h,
            slot * 0.8
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            x + slot / 2.0,
            H - PAD + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Filled squares for true entries of a boolean matrix.
pub fn pattern(title: &str, entries: &[Vec<bool>]) -> String {
    let mut s = frame(title);
    let m = entries.len().max(1);
    let cell = ((H - 2.0 * PAD) / m as f64).min((W - 2.0 * PAD) / m as f64);
    let x0 = (W - cell * m as f64) / 2.0;
    for (r, row) in entries.iter().enumerate() {
        for (c, &e) in row.iter().enumerate() {
            let fill = if e { "black" } else { "white" };
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="{fill}" stroke="#bbbbbb"/>"##,
                x0 + cell * c as f64,
                PAD + cell * r as f64
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
