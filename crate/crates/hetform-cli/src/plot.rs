//! Static SVG rendering of simulated trajectories.
//!
//! One fixed-size canvas: per-agent colored trajectory curves over the
//! network's edges, a hollow circle at each start position and a filled
//! star at each final position, with agent labels. Distances are drawn to
//! a uniform scale so shapes are not distorted.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use hetform_core::{Trajectory, TwoLayerGraph};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 520.0;
const MARGIN: f64 = 48.0;

/// Per-agent colors, cycled when the network outgrows the palette.
const PALETTE: [&str; 6] = [
    "#1f77b4", // blue
    "#2ca02c", // green
    "#d62728", // red
    "#c8a000", // dark yellow
    "#9467bd", // violet
    "#17becf", // cyan
];

struct Frame {
    scale: f64,
    x0: f64,
    y0: f64,
    cx: f64,
    cy: f64,
}

impl Frame {
    /// Uniform world → canvas map, y flipped so world "up" points up.
    fn fit(traj: &Trajectory) -> Frame {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &traj.positions {
            for p in c.positions() {
                min_x = min_x.min(p.x);
                max_x = max_x.max(p.x);
                min_y = min_y.min(p.y);
                max_y = max_y.max(p.y);
            }
        }
        let span_x = (max_x - min_x).max(1e-9);
        let span_y = (max_y - min_y).max(1e-9);
        let scale = ((WIDTH - 2.0 * MARGIN) / span_x).min((HEIGHT - 2.0 * MARGIN) / span_y);
        Frame {
            scale,
            x0: (min_x + max_x) / 2.0,
            y0: (min_y + max_y) / 2.0,
            cx: WIDTH / 2.0,
            cy: HEIGHT / 2.0,
        }
    }

    fn map(&self, p: &nalgebra::Vector2<f64>) -> (f64, f64) {
        (
            self.cx + (p.x - self.x0) * self.scale,
            self.cy - (p.y - self.y0) * self.scale,
        )
    }
}

/// A five-pointed star polygon centered at `(x, y)`.
fn star_points(x: f64, y: f64, outer: f64, inner: f64) -> String {
    let mut pts = String::new();
    for k in 0..10 {
        let r = if k % 2 == 0 { outer } else { inner };
        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
        let _ = write!(pts, "{:.2},{:.2} ", x + r * a.cos(), y + r * a.sin());
    }
    pts.trim_end().to_string()
}

/// Render a completed trajectory over its network.
pub fn trajectory_svg(traj: &Trajectory, g: &TwoLayerGraph) -> String {
    let frame = Frame::fit(traj);
    let first = &traj.positions[0];
    let last = traj.final_position();
    let n = first.len();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r##"  <rect width="{WIDTH}" height="{HEIGHT}" fill="white" stroke="#ddd"/>"##
    );

    // The sensing topology, drawn once per undirected pair: dashed where the
    // agents started, solid where they ended.
    let pairs: BTreeSet<(usize, usize)> = g
        .edges()
        .iter()
        .map(|e| (e.tail.min(e.head), e.tail.max(e.head)))
        .collect();
    for &(i, j) in &pairs {
        let (x1, y1) = frame.map(&first[i]);
        let (x2, y2) = frame.map(&first[j]);
        let _ = writeln!(
            svg,
            r##"  <line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#bbbbbb" stroke-dasharray="5,4"/>"##
        );
    }
    for &(i, j) in &pairs {
        let (x1, y1) = frame.map(&last[i]);
        let (x2, y2) = frame.map(&last[j]);
        let _ = writeln!(
            svg,
            r##"  <line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#444444" stroke-width="1.5"/>"##
        );
    }

    for i in 0..n {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for c in &traj.positions {
            let (x, y) = frame.map(&c[i]);
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            svg,
            r#"  <polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" opacity="0.9"/>"#,
            pts.trim_end()
        );
    }

    for i in 0..n {
        let color = PALETTE[i % PALETTE.len()];
        let (x, y) = frame.map(&first[i]);
        let _ = writeln!(
            svg,
            r#"  <circle cx="{x:.2}" cy="{y:.2}" r="4" fill="white" stroke="{color}" stroke-width="1.5"/>"#
        );
    }
    for i in 0..n {
        let color = PALETTE[i % PALETTE.len()];
        let (x, y) = frame.map(&last[i]);
        let _ = writeln!(
            svg,
            r#"  <polygon points="{}" fill="{color}"/>"#,
            star_points(x, y, 7.0, 2.8)
        );
    }
    for i in 0..n {
        let (x, y) = frame.map(&last[i]);
        let _ = writeln!(
            svg,
            r##"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" fill="#333">R{}</text>"##,
            x + 9.0,
            y - 6.0,
            i + 1
        );
    }

    svg.push_str("</svg>\n");
    svg
}
