use std::fmt::Write;

use msclr::evalkit::ClassDiff;

const BAR: f64 = 28.0;
const GAP: f64 = 8.0;
const HALF: f64 = 100.0;
const MARGIN: f64 = 40.0;

/// Bar chart of per-class accuracy differences, largest first. Positive
/// bars rise above the zero line.
pub fn diff_chart(diffs: &[ClassDiff], title: &str) -> String {
    let width = 2.0 * MARGIN + diffs.len() as f64 * (BAR + GAP);
    let height = 2.0 * MARGIN + 2.0 * HALF;
    let zero = MARGIN + HALF;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{zero}" x2="{}" y2="{zero}" stroke="black"/>"#,
        width - MARGIN
    );
    for (i, d) in diffs.iter().enumerate() {
        let x = MARGIN + i as f64 * (BAR + GAP) + GAP / 2.0;
        let h = d.delta.clamp(-1.0, 1.0).abs() * HALF;
        let (y, color) = if d.delta >= 0.0 { (zero - h, "#2b7a3d") } else { (zero, "#b03a2e") };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{BAR}" height="{h:.1}" fill="{color}"><title>class {}: {:+.4}</title></rect>"#,
            d.class, d.delta
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + BAR / 2.0,
            height - MARGIN / 2.0,
            d.class
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_diffs_draw_flat_bars() {
        let d = vec![ClassDiff { class: 0, delta: 0.0 }, ClassDiff { class: 1, delta: 0.0 }];
        let svg = diff_chart(&d, "a <vs> b");
        assert_eq!(svg.matches("height=\"0.0\"").count(), 2);
        assert!(svg.contains("a &lt;vs&gt; b"));
    }

    #[test]
    fn positive_bar_rises() {
        let svg = diff_chart(&[ClassDiff { class: 2, delta: 0.5 }], "t");
        assert!(svg.contains(r#"y="90.0" width="28" height="50.0""#));
    }
}
