//! Exact Euclidean distance transform and the stroke-width estimate built
//! on it.

use super::{skeletonize, BinaryRaster, RasterError};

// large but small enough that sums of squared indices stay exact
const INF: f64 = 1e12;

/// Squared-distance lower envelope along one line (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Centre-to-centre Euclidean distance from each pixel to the nearest
/// background pixel; pixels outside the frame count as background, and
/// background pixels get 0.
pub fn distance_to_background(img: &BinaryRaster) -> Vec<f64> {
    // pad by one pixel so the frame border behaves as background
    let (w, h) = (img.width() + 2, img.height() + 2);
    let mut grid = vec![0.0f64; w * h];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) {
                grid[(y + 1) * w + x + 1] = INF;
            }
        }
    }
    let len = w.max(h);
    let mut f = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut v = vec![0usize; len];
    let mut z = vec![0.0; len + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let mut result = Vec::with_capacity(img.len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            result.push(grid[(y + 1) * w + x + 1].sqrt());
        }
    }
    result
}

/// Mean local stroke width over skeleton pixels. A skeleton pixel at
/// centre distance `d` from the nearest background pixel sits `d - 0.5`
/// from the stroke edge, so its local width is `2 * (d - 0.5)`.
pub fn estimate_line_thickness(img: &BinaryRaster) -> Result<f64, RasterError> {
    if !img.has_ink() {
        return Err(RasterError::NoInk);
    }
    let skeleton = skeletonize(img);
    let dist = distance_to_background(img);
    let (sum, n) = skeleton
        .ink()
        .iter()
        .zip(&dist)
        .filter(|(&s, _)| s)
        .fold((0.0, 0usize), |(s, n), (_, &d)| (s + 2.0 * d - 1.0, n + 1));
    Ok(sum / n as f64)
}
