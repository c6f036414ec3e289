//! Brute-force reference implementations, written independently of the
//! library code they check.

use std::collections::{BTreeSet, VecDeque};

use creadraw_core::raster::BinaryRaster;

/// Components by breadth-first flood fill, in raster-scan order of their
/// first pixel.
pub fn bfs_components(img: &BinaryRaster, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let steps: &[(i64, i64)] = if eight {
        &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    } else {
        &[(0, -1), (-1, 0), (1, 0), (0, 1)]
    };
    for y in 0..h {
        for x in 0..w {
            if !img.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((cx, cy)) = queue.pop_front() {
                comp.push((cx, cy));
                for (dx, dy) in steps {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if img.get(nx, ny) && !seen[ny * w + nx] {
                        seen[ny * w + nx] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Keeps the 8-connected components with at least `min_area` pixels.
pub fn area_filter(img: &BinaryRaster, min_area: usize) -> BinaryRaster {
    let mut out = BinaryRaster::blank(img.width(), img.height()).unwrap();
    for comp in bfs_components(img, true) {
        if comp.len() >= min_area {
            for (x, y) in comp {
                out.set(x, y, true);
            }
        }
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Mean distance to the `k` nearest others, by sorting every distance.
pub fn knn_brute(vs: &[Vec<f64>], i: usize, k: usize) -> f64 {
    let mut d: Vec<f64> = (0..vs.len()).filter(|&j| j != i).map(|j| cosine(&vs[i], &vs[j])).collect();
    d.sort_by(f64::total_cmp);
    d[..k].iter().sum::<f64>() / k as f64
}

#[derive(Debug, PartialEq)]
pub struct OracleMerge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Average linkage recomputed from scratch at every step: each candidate
/// pair's distance is the mean over all cross-cluster leaf pairs. The
/// cluster holding the smaller leaf index is reported on the left.
pub fn naive_average_linkage(vs: &[Vec<f64>]) -> Vec<OracleMerge> {
    let n = vs.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (&clusters[a].1, &clusters[b].1);
                let mut s = 0.0;
                for &i in ca {
                    for &j in cb {
                        s += cosine(&vs[i], &vs[j]);
                    }
                }
                let d = s / (ca.len() * cb.len()) as f64;
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (height, a, b) = best;
        let (ma, mb) = (clusters[a].1[0], clusters[b].1[0]);
        let (lo, hi) = if ma < mb { (a, b) } else { (b, a) };
        let merged: Vec<usize> = {
            let mut m = [clusters[lo].1.clone(), clusters[hi].1.clone()].concat();
            m.sort_unstable();
            m
        };
        out.push(OracleMerge {
            left: clusters[lo].0,
            right: clusters[hi].0,
            height,
            size: merged.len(),
        });
        let (first, second) = (a.min(b), a.max(b));
        clusters.remove(second);
        clusters[first] = (n + step, merged);
    }
    out
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let below = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// (MSR - MSE) / MSR from the two-way ANOVA table.
pub fn icc_mean_squares(m: &[Vec<f64>]) -> f64 {
    let (n, k) = (m.len(), m[0].len());
    let grand = m.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let col_means: Vec<f64> = (0..k).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let ssr = k as f64 * row_means.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
    let ssc = n as f64 * col_means.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
    let sst: f64 = m.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let msr = ssr / (n - 1) as f64;
    let mse = (sst - ssr - ssc) / ((n - 1) * (k - 1)) as f64;
    (msr - mse) / msr
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ordinary least squares through the normal equations; returns the
/// coefficients and the maximized Gaussian log-likelihood.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let beta = solve(xtx, xty);
    let n = y.len() as f64;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| (yi - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum();
    let ll = -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0);
    (beta, ll)
}

/// A random formula right-hand side, kept as a tree so its expansion can be
/// computed without the parser.
#[derive(Clone, Debug)]
pub enum Expr {
    Var(String),
    Sum(Vec<Expr>),
    Cross(Box<Expr>, Box<Expr>),
    Inter(Box<Expr>, Box<Expr>),
}

pub type TermSet = BTreeSet<BTreeSet<String>>;

fn product(a: &TermSet, b: &TermSet) -> TermSet {
    let mut out = TermSet::new();
    for x in a {
        for y in b {
            out.insert(x.union(y).cloned().collect());
        }
    }
    out
}

impl Expr {
    /// `a * b` is `a + b + a:b`; `a:b` is the pairwise union of factors.
    pub fn expand(&self) -> TermSet {
        match self {
            Expr::Var(v) => TermSet::from([BTreeSet::from([v.clone()])]),
            Expr::Sum(xs) => xs.iter().flat_map(Expr::expand).collect(),
            Expr::Cross(a, b) => {
                let (ea, eb) = (a.expand(), b.expand());
                let mut out = product(&ea, &eb);
                out.extend(ea);
                out.extend(eb);
                out
            }
            Expr::Inter(a, b) => product(&a.expand(), &b.expand()),
        }
    }

    /// Source text; `:` binds tighter than `*`, which binds tighter than `+`.
    pub fn render(&self) -> String {
        match self {
            Expr::Var(v) => v.clone(),
            Expr::Sum(xs) => xs.iter().map(Expr::render).collect::<Vec<_>>().join(" + "),
            Expr::Cross(a, b) => format!("{} * {}", a.operand(3), b.operand(3)),
            Expr::Inter(a, b) => format!("{}:{}", a.operand(4), b.operand(4)),
        }
    }

    fn level(&self) -> u8 {
        match self {
            Expr::Sum(_) => 1,
            Expr::Cross(..) => 2,
            Expr::Inter(..) => 3,
            Expr::Var(_) => 4,
        }
    }

    fn operand(&self, min: u8) -> String {
        if self.level() >= min {
            self.render()
        } else {
            format!("({})", self.render())
        }
    }
}
