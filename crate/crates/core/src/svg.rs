//! Minimal hand-written SVG charts. Output is a pure function of the input,
//! so rendered files are byte-stable.

use std::fmt::Write;

use crate::masking::Mask;

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart: one group per label, one bar per series. Missing
/// values (`None`) leave a gap.
pub fn bar_chart(title: &str, labels: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (w, h, left, bottom, top) = (640.0, 360.0, 50.0, 60.0, 40.0);
    let plot_h = h - bottom - top;
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().flatten())
        .fold(0.0f64, |a, b| a.max(*b))
        .max(1e-9);
    let group_w = (w - left - 20.0) / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - bottom, w - 20.0, h - bottom);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{max:.3}</text>"#, left - 4.0, top + 4.0);
    for (gi, label) in labels.iter().enumerate() {
        let gx = left + gi as f64 * group_w + group_w * 0.1;
        for (si, (_, values)) in series.iter().enumerate() {
            let Some(v) = values.get(gi).copied().flatten() else { continue };
            let bh = plot_h * (v / max).clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + si as f64 * bar_w,
                h - bottom - bh,
                bar_w,
                bh,
                PALETTE[si % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            h - bottom + 16.0,
            escape(label)
        );
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let y = h - 20.0;
        let x = left + si as f64 * 120.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[si % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of several series over a shared x axis.
pub fn line_chart(title: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, bottom, top) = (640.0, 360.0, 50.0, 60.0, 40.0);
    let finite = series.iter().flat_map(|(_, v)| v.iter()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(lo + 1e-9)) } else { (0.0, 1.0) };
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let sx = |x: f64| left + (w - left - 20.0) * if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    let sy = |y: f64| h - bottom - (h - bottom - top) * (y - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - bottom, w - 20.0, h - bottom);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, left - 4.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, left - 4.0, h - bottom);
    for (si, (name, ys)) in series.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let x = left + si as f64 * 120.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, h - 29.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x + 14.0, h - 20.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Renders a mask with masked pixels in black, one run of pixels per rect.
pub fn mask_image(mask: &Mask, scale: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}"><rect width="100%" height="100%" fill="white"/>"#,
        mask.width() * scale,
        mask.height() * scale
    );
    for r in 0..mask.height() {
        let mut c = 0;
        while c < mask.width() {
            if mask.get(r, c) {
                c += 1;
                continue;
            }
            let start = c;
            while c < mask.width() && !mask.get(r, c) {
                c += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{scale}" fill="black"/>"#,
                start * scale,
                r * scale,
                (c - start) * scale
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_and_stable() {
        let labels = vec!["a".to_string(), "b<c".to_string()];
        let series = vec![("x".to_string(), vec![Some(0.5), None]), ("y".to_string(), vec![Some(1.0), Some(0.2)])];
        let a = bar_chart("t", &labels, &series);
        assert_eq!(a, bar_chart("t", &labels, &series));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("b&lt;c"));
        let l = line_chart("loss", &[0.0, 1.0, 2.0], &[("train".into(), vec![3.0, 2.0, f64::NAN])]);
        assert_eq!(l.matches("<polyline").count(), 1);
    }

    #[test]
    fn mask_rendering_counts_runs() {
        let m = Mask::from_fn(2, 4, |r, c| !(r == 0 && (c == 1 || c == 2)));
        let s = mask_image(&m, 2);
        assert_eq!(s.matches("fill=\"black\"").count(), 1);
        assert!(s.contains(r#"width="4" height="2""#));
    }
}
