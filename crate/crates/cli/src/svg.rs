//! Dependency-free SVG scatter plots: one circle per point, viewport
//! autoscaled to the embedding's bounding box, colors cycling through a
//! fixed categorical palette by label.

use gdr_core::EmbeddingState;

/// 20-entry categorical palette (hex RGB).
const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

pub fn scatter_svg(state: &EmbeddingState, labels: Option<&[i64]>) -> String {
    let n = state.n;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let p = state.point(i);
        let x = p[0];
        let y = if state.d > 1 { p[1] } else { 0.0 };
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);
    let margin_x = span_x * 0.05;
    let margin_y = span_y * 0.05;
    let vb = (
        min_x - margin_x,
        min_y - margin_y,
        span_x + 2.0 * margin_x,
        span_y + 2.0 * margin_y,
    );
    let r = span_x.max(span_y) / 200.0;

    let mut out = String::with_capacity(n * 64 + 256);
    out.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"800\" height=\"800\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">\n",
        vb.0, vb.1, vb.2, vb.3
    ));
    for i in 0..n {
        let p = state.point(i);
        let x = p[0];
        let y = if state.d > 1 { p[1] } else { 0.0 };
        let color = match labels {
            Some(l) => PALETTE[(l[i].rem_euclid(20)) as usize],
            None => PALETTE[0],
        };
        out.push_str(&format!(
            "<circle cx=\"{x:.6}\" cy=\"{y:.6}\" r=\"{r:.6}\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n"
        ));
    }
    out.push_str("</svg>\n");
    out
}
