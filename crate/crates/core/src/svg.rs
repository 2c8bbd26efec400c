//! Minimal static SVG bar charts for histograms.

use std::fmt::Write as _;

use crate::report::Histogram;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

// Fixed 20-color palette, cycled for stratum coloring.
const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Render a histogram as a standalone SVG document. Bars are stacked by
/// stratum when composition data is present.
pub fn histogram_svg(hist: &Histogram, title: &str, x_label: &str, y_label: &str) -> String {
    let bins = hist.bins();
    let max_count = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let bar_w = plot_w / bins as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        title
    );

    for (b, &count) in hist.counts.iter().enumerate() {
        let x = MARGIN_LEFT + b as f64 * bar_w;
        match &hist.strata {
            None => {
                let h = plot_h * count as f64 / max_count;
                let y = MARGIN_TOP + plot_h - h;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                    fmt(x),
                    fmt(y),
                    fmt(bar_w.max(1.0) - 0.5),
                    fmt(h),
                    PALETTE[0]
                );
            }
            Some(strata) => {
                let mut y_top = MARGIN_TOP + plot_h;
                for (i, &id) in strata.stratum_ids.iter().enumerate() {
                    let seg = strata.per_bin[b][i];
                    if seg == 0 {
                        continue;
                    }
                    let h = plot_h * seg as f64 / max_count;
                    y_top -= h;
                    let _ = writeln!(
                        svg,
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                        fmt(x),
                        fmt(y_top),
                        fmt(bar_w.max(1.0) - 0.5),
                        fmt(h),
                        PALETTE[id % PALETTE.len()]
                    );
                }
            }
        }
    }

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{x0}\" y1=\"{MARGIN_TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let ticks = [
        (MARGIN_LEFT, hist.edges[0]),
        (MARGIN_LEFT + plot_w / 2.0, hist.edges[bins / 2]),
        (MARGIN_LEFT + plot_w, hist.edges[bins]),
    ];
    for (x, v) in ticks {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            fmt(x),
            fmt(y0 + 18.0),
            fmt(v)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">0</text>",
        fmt(x0 - 14.0),
        fmt(y0)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        fmt(x0 - 14.0),
        fmt(MARGIN_TOP + 4.0),
        max_count
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 10.0,
        x_label
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        y_label
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report;

    #[test]
    fn renders_plain_histogram() {
        let h = report::histogram(&[1.0, 1.2, 2.0, 3.0, 3.0], 4).unwrap();
        let svg = histogram_svg(&h, "cpi", "CPI", "regions");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.matches("<rect").count() >= 4);
    }

    #[test]
    fn renders_stacked_histogram_deterministically() {
        let values = vec![(1.0, 0), (1.1, 1), (2.0, 0), (2.9, 1)];
        let h = report::histogram_by_stratum(&values, 3).unwrap();
        let a = histogram_svg(&h, "t", "x", "y");
        let b = histogram_svg(&h, "t", "x", "y");
        assert_eq!(a, b);
        assert!(a.contains(PALETTE[1]));
    }
}
