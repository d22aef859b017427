//! Hand-written SVG for metric curves and embedding histograms.
//!
//! Every plotted element carries `data-*` attributes with the values it
//! encodes, so tests can read a chart back without rasterizing it.

use std::fmt::Write as _;

use legan::measures::HistogramDump;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

fn plot_w() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_h() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w() / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (LEFT, TOP + plot_h(), LEFT + plot_w(), TOP);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w() / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        TOP + plot_h() / 2.0,
        TOP + plot_h() / 2.0,
        escape(y_label)
    );
}

fn tick_x(out: &mut String, x: f64, label: &str) {
    let y = TOP + plot_h();
    let _ = writeln!(
        out,
        r#"<line x1="{x:.2}" y1="{y}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
        y + 5.0,
        y + 20.0,
        escape(label)
    );
}

fn tick_y(out: &mut String, y: f64, label: &str) {
    let _ = writeln!(
        out,
        r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
        LEFT - 5.0,
        LEFT - 8.0,
        y + 4.0,
        escape(label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = LEFT + plot_w() + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            y - 2.0,
            x + 20.0,
            y + 4.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

/// One named curve of `(epoch, value)` points.
pub struct Series {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

/// Line chart of several series against epoch. A single series is drawn on
/// its own value axis; with several, each is scaled to its own range, which
/// the legend states.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let all_epochs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (e_min, e_max) = all_epochs.fold((usize::MAX, 0), |(lo, hi), e| (lo.min(e), hi.max(e)));
    let (e_lo, e_hi) = if e_min >= e_max {
        (e_min as f64 - 0.5, e_min as f64 + 0.5)
    } else {
        (e_min as f64, e_max as f64)
    };
    let x_of = |e: usize| LEFT + (e as f64 - e_lo) / (e_hi - e_lo) * plot_w();
    let range = |s: &Series| {
        let lo = s.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = s
            .points
            .iter()
            .map(|p| p.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if lo < hi {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let single = series.len() == 1;
    let y_label = if single {
        series[0].name.clone()
    } else {
        "value (each series scaled to its range)".to_string()
    };
    axes(&mut out, "epoch", &y_label);
    for k in 0..=4 {
        let e = e_lo + (e_hi - e_lo) * k as f64 / 4.0;
        tick_x(
            &mut out,
            LEFT + plot_w() * k as f64 / 4.0,
            &format!("{e:.0}"),
        );
    }
    if single {
        let (lo, hi) = range(&series[0]);
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            tick_y(
                &mut out,
                TOP + plot_h() * (1.0 - k as f64 / 4.0),
                &fmt_num(v),
            );
        }
    } else {
        tick_y(&mut out, TOP + plot_h(), "min");
        tick_y(&mut out, TOP, "max");
    }
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let (lo, hi) = range(s);
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(e, v)| {
                let y = TOP + (1.0 - (v - lo) / (hi - lo)) * plot_h();
                format!("{:.2},{:.2}", x_of(e), y)
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-column="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&s.name),
            pts.join(" ")
        );
        let label = if single {
            s.name.clone()
        } else {
            format!("{} [{}, {}]", s.name, fmt_num(lo), fmt_num(hi))
        };
        entries.push((label, color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Overlaid real and fake bar charts over the dump's bins.
pub fn histogram_chart(dump: &HistogramDump<f64>) -> String {
    let mut out = String::new();
    let mut title = format!("embedding histogram, epoch {}", dump.epoch);
    if dump.degenerate {
        title.push_str(" (all embeddings equal)");
    }
    header(&mut out, &title);
    axes(&mut out, "embedding", "count");
    let bins = dump.real.len();
    let max = dump
        .real
        .iter()
        .chain(&dump.fake)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1);
    let bin_w = plot_w() / bins as f64;
    let bar_w = bin_w * 0.45;
    for (source, counts, color, offset) in [
        ("real", &dump.real, PALETTE[0], 0.05),
        ("fake", &dump.fake, PALETTE[1], 0.5),
    ] {
        for (b, &c) in counts.iter().enumerate() {
            let h = c as f64 / max as f64 * plot_h();
            let x = LEFT + bin_w * (b as f64 + offset);
            let y = TOP + plot_h() - h;
            let _ = writeln!(
                out,
                r#"<rect class="bar" data-source="{source}" data-bin="{b}" data-count="{c}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.8"/>"#
            );
        }
    }
    for (i, &edge) in dump.edges.iter().enumerate() {
        if bins <= 10 || i == 0 || i == bins || i == bins / 2 {
            tick_x(&mut out, LEFT + bin_w * i as f64, &fmt_num(edge));
        }
    }
    for k in 0..=4 {
        let v = max as f64 * k as f64 / 4.0;
        tick_y(
            &mut out,
            TOP + plot_h() * (1.0 - k as f64 / 4.0),
            &format!("{v:.1}"),
        );
    }
    legend(
        &mut out,
        &[
            ("real".to_string(), PALETTE[0]),
            ("fake".to_string(), PALETTE[1]),
        ],
    );
    out.push_str("</svg>\n");
    out
}

/// A bar read back from [`histogram_chart`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub source: String,
    pub bin: usize,
    pub count: usize,
    pub height: f64,
}

fn attr<'a>(element: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let start = element.find(&key)? + key.len();
    let len = element[start..].find('"')?;
    Some(&element[start..start + len])
}

fn elements<'a>(svg: &'a str, tag: &str, class: &str) -> Vec<&'a str> {
    let open = format!("<{tag} class=\"{class}\"");
    svg.match_indices(&open)
        .filter_map(|(i, _)| svg[i..].find("/>").map(|end| &svg[i..i + end]))
        .collect()
}

pub fn read_bars(svg: &str) -> Vec<Bar> {
    elements(svg, "rect", "bar")
        .into_iter()
        .filter_map(|e| {
            Some(Bar {
                source: attr(e, "data-source")?.to_string(),
                bin: attr(e, "data-bin")?.parse().ok()?,
                count: attr(e, "data-count")?.parse().ok()?,
                height: attr(e, "height")?.parse().ok()?,
            })
        })
        .collect()
}

/// `(column, [(x, y)])` for every polyline in [`line_chart`] output.
pub fn read_polylines(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    elements(svg, "polyline", "series")
        .into_iter()
        .filter_map(|e| {
            let pts = attr(e, "points")?
                .split_whitespace()
                .filter_map(|p| {
                    let (x, y) = p.split_once(',')?;
                    Some((x.parse().ok()?, y.parse().ok()?))
                })
                .collect();
            Some((attr(e, "data-column")?.to_string(), pts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_series_gives_monotone_polyline() {
        let s = Series {
            name: "l_ratio".into(),
            points: (0..10).map(|e| (e, e as f64 / 10.0)).collect(),
        };
        let svg = line_chart("t", &[s]);
        let lines = read_polylines(&svg);
        assert_eq!(lines.len(), 1);
        let ys: Vec<f64> = lines[0].1.iter().map(|p| p.1).collect();
        assert!(ys.windows(2).all(|w| w[1] < w[0]));
        let xs: Vec<f64> = lines[0].1.iter().map(|p| p.0).collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bars_are_proportional_and_read_back() {
        let dump = HistogramDump {
            epoch: 3,
            edges: vec![0.0, 0.5, 1.0],
            real: vec![1, 1],
            fake: vec![0, 1],
            degenerate: false,
        };
        let bars = read_bars(&histogram_chart(&dump));
        assert_eq!(bars.len(), 4);
        let fake0 = bars
            .iter()
            .find(|b| b.source == "fake" && b.bin == 0)
            .unwrap();
        assert_eq!((fake0.count, fake0.height), (0, 0.0));
        let real0 = bars
            .iter()
            .find(|b| b.source == "real" && b.bin == 0)
            .unwrap();
        let fake1 = bars
            .iter()
            .find(|b| b.source == "fake" && b.bin == 1)
            .unwrap();
        assert_eq!(real0.height, fake1.height);
        assert!(real0.height > 0.0);
    }

    #[test]
    fn single_epoch_and_flat_series_render() {
        let s = Series {
            name: "g_loss".into(),
            points: vec![(0, 1.0)],
        };
        let svg = line_chart("t", &[s]);
        assert!(!svg.contains("NaN"));
    }
}
