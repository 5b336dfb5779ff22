//! Minimal line-and-band chart: observed flow, predicted mean and the 95%
//! interval as a filled polygon. Output depends only on the inputs.

use std::fmt::Write as _;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

pub struct ChartSeries<'a> {
    pub timestamps: &'a [i64],
    pub observed: &'a [f64],
    pub mean: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

pub fn band_chart(title: &str, data: &ChartSeries<'_>) -> String {
    let n = data.timestamps.len();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    if n == 0 {
        out.push_str("</svg>\n");
        return out;
    }
    let t0 = data.timestamps[0] as f64;
    let t1 = (data.timestamps[n - 1] as f64).max(t0 + 1.0);
    let all = data.observed.iter().chain(data.lower).chain(data.upper).chain(data.mean);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1.0);
    let x = |t: i64| MARGIN + (t as f64 - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let _ = writeln!(
        out,
        r##"<path d="M{m} {b} H{r} M{m} {b} V{m}" stroke="#444" fill="none"/>"##,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, anchor) in [(lo, "start"), (hi, "start")] {
        let _ = writeln!(
            out,
            r#"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{:.0}</text>"#,
            y(v) + 4.0,
            v
        );
    }
    let hours = ((t1 - t0) / 3600.0).round();
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{hours} h</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0
    );

    let mut band = String::new();
    for i in 0..n {
        let _ = write!(band, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, x(data.timestamps[i]), y(data.upper[i]));
    }
    for i in (0..n).rev() {
        let _ = write!(band, "L{:.2} {:.2} ", x(data.timestamps[i]), y(data.lower[i]));
    }
    band.push('Z');
    let _ = writeln!(out, r##"<path d="{band}" fill="#7fa7d9" fill-opacity="0.45" stroke="none"/>"##);

    let polyline = |values: &[f64]| {
        let mut s = String::new();
        for (t, v) in data.timestamps.iter().zip(values) {
            let _ = write!(s, "{:.2},{:.2} ", x(*t), y(*v));
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#222" stroke-width="1"/>"##,
        polyline(data.observed)
    );
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f4e99" stroke-width="1.5"/>"##,
        polyline(data.mean)
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
