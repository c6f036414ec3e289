//! SVG figures and their underlying series as TSV.

use std::fmt::Write as _;
use std::path::Path;

use creadraw_core::content::CutRule;

use crate::analyze::{Comparison, ReportBundle};
use crate::pipeline::GroupClustering;
use crate::svg::{fmt_tick, ticks, Svg};
use crate::CliError;

pub const FIGURES_DIR: &str = "figures";

const PLOT_H: f64 = 260.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 60.0;
const BOX_W: f64 = 50.0;
const SLOT_W: f64 = 90.0;
const BRACKET_STEP: f64 = 16.0;

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Subgroup boxplots with significance brackets over starred pairs.
pub fn boxplot_svg(c: &Comparison) -> Option<String> {
    if c.boxes.is_empty() {
        return None;
    }
    let pairs: Vec<(usize, usize)> = c
        .pairwise
        .iter()
        .filter(|p| p.significant)
        .filter_map(|p| {
            let a = c.boxes.iter().position(|b| b.label == p.a)?;
            let b = c.boxes.iter().position(|b| b.label == p.b)?;
            Some((a.min(b), a.max(b)))
        })
        .collect();
    let bracket_h = pairs.len() as f64 * BRACKET_STEP;
    let width = LEFT + SLOT_W * c.boxes.len() as f64 + 20.0;
    let height = TOP + bracket_h + PLOT_H + 50.0;
    let plot_top = TOP + bracket_h;

    let lo = c.boxes.iter().flat_map(|b| b.values.iter()).copied().fold(f64::INFINITY, f64::min);
    let hi = c.boxes.iter().flat_map(|b| b.values.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| plot_top + PLOT_H * (1.0 - (v - lo) / (hi - lo));
    let cx = |i: usize| LEFT + SLOT_W * (i as f64 + 0.5);

    let mut s = Svg::new(width, height);
    s.text(width / 2.0, 18.0, "middle", "title", &c.metric);
    s.line(LEFT, plot_top, LEFT, plot_top + PLOT_H, "axis");
    for t in ticks(lo, hi) {
        s.line(LEFT - 4.0, y(t), LEFT, y(t), "tick");
        s.text(LEFT - 6.0, y(t) + 4.0, "end", "tick", &fmt_tick(t));
    }
    for (i, b) in c.boxes.iter().enumerate() {
        let x = cx(i);
        s.line(x, y(b.whisker_high), x, y(b.q3), "whisker");
        s.line(x, y(b.q1), x, y(b.whisker_low), "whisker");
        s.line(x - BOX_W / 4.0, y(b.whisker_high), x + BOX_W / 4.0, y(b.whisker_high), "whisker");
        s.line(x - BOX_W / 4.0, y(b.whisker_low), x + BOX_W / 4.0, y(b.whisker_low), "whisker");
        s.rect(x - BOX_W / 2.0, y(b.q3), BOX_W, y(b.q1) - y(b.q3), "box");
        s.line(x - BOX_W / 2.0, y(b.median), x + BOX_W / 2.0, y(b.median), "median");
        for &o in &b.outliers {
            s.circle(x, y(o), 2.5, "outlier");
        }
        s.text(x, plot_top + PLOT_H + 16.0, "middle", "label", &b.label);
        s.text(x, plot_top + PLOT_H + 30.0, "middle", "count", &format!("n={}", b.n));
    }
    for (k, (a, b)) in pairs.iter().enumerate() {
        let yb = plot_top - 6.0 - BRACKET_STEP * k as f64;
        s.polyline(&[(cx(*a), yb + 5.0), (cx(*a), yb), (cx(*b), yb), (cx(*b), yb + 5.0)], "bracket");
        s.text((cx(*a) + cx(*b)) / 2.0, yb - 2.0, "middle", "stars", "***");
    }
    Some(s.finish(&c.metric))
}

pub fn boxplot_tsv(c: &Comparison) -> String {
    let mut t = String::from("subgroup\tvalue\n");
    for b in &c.boxes {
        for v in &b.values {
            let _ = writeln!(t, "{}\t{v}", b.label);
        }
    }
    t
}

/// Leaves in dendrogram order: left subtree first.
pub fn leaf_order(c: &GroupClustering) -> Vec<usize> {
    let n = c.drawing_ids.len();
    if c.merges.is_empty() {
        return (0..n).collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut stack = vec![n + c.merges.len() - 1];
    while let Some(node) = stack.pop() {
        if node < n {
            out.push(node);
        } else {
            let m = &c.merges[node - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    out
}

pub fn dendrogram_svg(c: &GroupClustering) -> Option<String> {
    let n = c.drawing_ids.len();
    if n == 0 {
        return None;
    }
    let leaf_w = 9.0;
    let width = LEFT + leaf_w * n as f64 + 20.0;
    let height = TOP + PLOT_H + 90.0;
    let top_h = c.merges.iter().map(|m| m.height).fold(0.0, f64::max).max(1e-9);
    let y = |h: f64| TOP + PLOT_H * (1.0 - h / top_h);
    let order = leaf_order(c);
    let mut x = vec![0.0; n + c.merges.len()];
    let mut h = vec![0.0; n + c.merges.len()];
    for (pos, &leaf) in order.iter().enumerate() {
        x[leaf] = LEFT + leaf_w * (pos as f64 + 0.5);
    }
    let mut s = Svg::new(width, height);
    s.text(width / 2.0, 18.0, "middle", "title", &format!("{} ({} clusters)", c.group, c.n_clusters));
    s.line(LEFT - 10.0, TOP, LEFT - 10.0, TOP + PLOT_H, "axis");
    for t in ticks(0.0, top_h) {
        s.line(LEFT - 14.0, y(t), LEFT - 10.0, y(t), "tick");
        s.text(LEFT - 16.0, y(t) + 4.0, "end", "tick", &fmt_tick(t));
    }
    for (i, m) in c.merges.iter().enumerate() {
        let id = n + i;
        x[id] = (x[m.left] + x[m.right]) / 2.0;
        h[id] = m.height;
        s.polyline(
            &[
                (x[m.left], y(h[m.left])),
                (x[m.left], y(m.height)),
                (x[m.right], y(m.height)),
                (x[m.right], y(h[m.right])),
            ],
            "link",
        );
    }
    if let CutRule::Distance(d) = c.cut {
        if d <= top_h {
            s.line(LEFT - 10.0, y(d), width - 10.0, y(d), "cut");
        }
    }
    for &leaf in &order {
        s.vtext(x[leaf] + 3.0, TOP + PLOT_H + 6.0, "leaf", &c.drawing_ids[leaf]);
    }
    Some(s.finish(&format!("dendrogram {}", c.group)))
}

pub fn dendrogram_tsv(c: &GroupClustering) -> String {
    let mut t = String::from("step\tleft\tright\theight\tsize\n");
    for (i, m) in c.merges.iter().enumerate() {
        let _ = writeln!(t, "{i}\t{}\t{}\t{}\t{}", m.left, m.right, m.height, m.size);
    }
    t.push_str("\nleaf\tdrawing_id\tcluster\n");
    for (i, (id, l)) in c.drawing_ids.iter().zip(&c.labels).enumerate() {
        let _ = writeln!(t, "{i}\t{id}\t{l}");
    }
    t
}

/// Writes every figure into `out_dir/figures`. Returns the notices for
/// figures that were skipped.
pub fn emit_figures(b: &ReportBundle, out_dir: &Path) -> Result<Vec<String>, CliError> {
    let dir = out_dir.join(FIGURES_DIR);
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let write = |name: String, body: String| -> Result<(), CliError> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(CliError::io(&p))
    };
    let mut notices = Vec::new();
    let mut comparisons: Vec<&Comparison> = b.group_compare.iter().flatten().collect();
    if let Some(c) = b.flexibility.as_ref().and_then(|f| f.comparison.as_ref()) {
        comparisons.push(c);
    }
    for c in comparisons {
        let stem = format!("box_{}", safe_name(&c.metric));
        match boxplot_svg(c) {
            Some(svg) => {
                write(format!("{stem}.svg"), svg)?;
                write(format!("{stem}.tsv"), boxplot_tsv(c))?;
            }
            None => notices.push(format!("{stem}: empty series, figure skipped")),
        }
    }
    for c in &b.clustering {
        let stem = format!("dendrogram_{}", safe_name(&c.group));
        match dendrogram_svg(c) {
            Some(svg) => {
                write(format!("{stem}.svg"), svg)?;
                write(format!("{stem}.tsv"), dendrogram_tsv(c))?;
            }
            None => notices.push(format!("{stem}: no leaves, figure skipped")),
        }
    }
    for n in &notices {
        log::warn!("{n}");
    }
    Ok(notices)
}
