//! Learning-curve plot: mean client accuracy against cumulative SGD steps.

use std::fmt::Write;

use fedsim_core::orchestrator::ExperimentReport;

use crate::output::mean_std;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Curve<'a> {
    pub label: String,
    pub report: &'a ExperimentReport,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn render(curves: &[Curve<'_>]) -> String {
    let max_steps = curves
        .iter()
        .flat_map(|c| c.report.rounds.iter().map(|r| r.cumulative_steps))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |steps: f64| LEFT + plot_w * steps / max_steps;
    let y = |acc: f64| TOP + plot_h * (1.0 - acc);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"##
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);

    // axes and grid
    let _ = writeln!(s, r##"<g id="axes" stroke="#444" fill="none">"##);
    let _ = writeln!(
        s,
        r##"<path d="M{LEFT} {TOP} V{:.2} H{:.2}"/>"##,
        TOP + plot_h,
        LEFT + plot_w
    );
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#ddd"/>"##,
            y(acc),
            LEFT + plot_w
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g id="ticks" fill="#222">"##);
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}%</text>"##,
            LEFT - 6.0,
            y(acc) + 4.0,
            acc * 100.0
        );
        let steps = max_steps * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"##,
            x(steps),
            TOP + plot_h + 18.0,
            steps
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">cumulative SGD steps</text>"##,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r##"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">mean client accuracy</text>"##,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(s, "</g>");

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = c
            .report
            .rounds
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.cumulative_steps as f64), y(r.mean_accuracy)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="curve" data-label="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"##,
            escape(&c.label),
            points.join(" ")
        );
        if let Some(step) = c.report.clustering_step {
            let cx = x(step as f64);
            let _ = writeln!(
                s,
                r##"<line class="cluster-marker" x1="{cx:.2}" y1="{TOP}" x2="{cx:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"##,
                TOP + plot_h
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" fill="{color}">clustering</text>"##,
                cx + 3.0,
                TOP + 12.0 + 14.0 * i as f64
            );
        }
    }

    // legend with the final mean ± std of each curve
    let lx = WIDTH - RIGHT + 15.0;
    let _ = writeln!(s, r##"<g id="legend">"##);
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let ly = TOP + 10.0 + 36.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"##,
            lx + 24.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}">{}</text>"##,
            lx + 30.0,
            ly + 4.0,
            escape(&c.label)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#555">{}</text>"##,
            lx + 30.0,
            ly + 18.0,
            escape(&mean_std(c.report))
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
