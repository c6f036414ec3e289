//! Progressive probabilistic Hough transform for line segments.
//!
//! Points vote in a random (seeded) order. As soon as a point pushes some
//! accumulator cell over the threshold, the corresponding line is followed
//! through the remaining ink in both directions, tolerating gaps of up to
//! `max_gap` steps. If the run is long enough, its pixels are removed from
//! further consideration, their votes are withdrawn and the segment is
//! reported. Otherwise only the triggering point is retired.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::BinaryRaster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    /// Distance resolution of the accumulator, pixels.
    pub rho_res: f64,
    /// Angular resolution of the accumulator, degrees.
    pub theta_res_deg: f64,
    /// Votes needed before a line is followed.
    pub threshold: u32,
    /// Shortest segment reported, pixels.
    pub min_length: f64,
    /// Longest run of empty steps bridged while following a line.
    pub max_gap: u32,
    /// Half-width, in pixels across the line, searched while following it.
    pub corridor: u32,
    /// Segments closer than this in angle (degrees) ...
    pub merge_angle_deg: f64,
    /// ... and in midpoint distance (pixels) count as one line.
    pub merge_distance: f64,
    /// Seed for the voting order.
    pub seed: u64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            rho_res: 1.0,
            theta_res_deg: 1.0,
            threshold: 50,
            min_length: 30.0,
            max_gap: 5,
            corridor: 2,
            merge_angle_deg: 5.0,
            merge_distance: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (((self.x1 - self.x0).pow(2) + (self.y1 - self.y0).pow(2)) as f64).sqrt()
    }

    /// Undirected angle in degrees, [0, 180).
    pub fn angle_deg(&self) -> f64 {
        let a = ((self.y1 - self.y0) as f64)
            .atan2((self.x1 - self.x0) as f64)
            .to_degrees();
        a.rem_euclid(180.0)
    }

    pub fn midpoint(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

struct Accumulator {
    cos: Vec<f64>,
    sin: Vec<f64>,
    rho_res: f64,
    offset: i64,
    num_rho: usize,
    votes: Vec<u32>,
}

impl Accumulator {
    fn new(width: usize, height: usize, params: &HoughParams) -> Self {
        let num_angle = (180.0 / params.theta_res_deg).round().max(1.0) as usize;
        let (sin, cos): (Vec<f64>, Vec<f64>) = (0..num_angle)
            .map(|n| (n as f64 * params.theta_res_deg).to_radians().sin_cos())
            .unzip();
        let diag = ((width * width + height * height) as f64).sqrt();
        let half = (diag / params.rho_res).ceil() as i64 + 1;
        let num_rho = (2 * half + 1) as usize;
        Self {
            cos,
            sin,
            rho_res: params.rho_res,
            offset: half,
            num_rho,
            votes: vec![0; num_angle * num_rho],
        }
    }

    #[inline]
    fn rho_index(&self, n: usize, x: i64, y: i64) -> usize {
        let r = (x as f64 * self.cos[n] + y as f64 * self.sin[n]) / self.rho_res;
        (r.round() as i64 + self.offset) as usize
    }

    /// Adds the point's votes; returns (max votes, angle index, line offset).
    fn vote(&mut self, x: i64, y: i64) -> (u32, usize, f64) {
        let mut best = (0, 0, 0);
        for n in 0..self.cos.len() {
            let r = self.rho_index(n, x, y);
            let cell = &mut self.votes[n * self.num_rho + r];
            *cell += 1;
            if *cell > best.0 {
                best = (*cell, n, r);
            }
        }
        (best.0, best.1, (best.2 as i64 - self.offset) as f64 * self.rho_res)
    }

    fn unvote(&mut self, x: i64, y: i64) {
        for n in 0..self.cos.len() {
            let r = self.rho_index(n, x, y);
            let cell = &mut self.votes[n * self.num_rho + r];
            *cell = cell.saturating_sub(1);
        }
    }
}

/// Detects straight segments in `img` as given (no thinning).
pub fn detect_segments(img: &BinaryRaster, params: &HoughParams) -> Vec<Segment> {
    let (w, h) = (img.width(), img.height());
    let mut points: Vec<(i64, i64)> = img.ink_points().map(|(x, y)| (x as i64, y as i64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    points.shuffle(&mut rng);

    let mut mask = img.ink().to_vec();
    let mut voted = vec![false; w * h];
    let mut acc = Accumulator::new(w, h, params);
    let mut segments = Vec::new();
    let index = |x: i64, y: i64| -> Option<usize> {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            None
        } else {
            Some(y as usize * w + x as usize)
        }
    };
    let corridor = params.corridor as i64;
    let offsets: Vec<i64> = std::iter::once(0)
        .chain((1..=corridor).flat_map(|o| [-o, o]))
        .collect();

    for &(px, py) in &points {
        let i = index(px, py).expect("ink point in frame");
        if !mask[i] {
            continue;
        }
        let (best, n, rho) = acc.vote(px, py);
        voted[i] = true;
        if best < params.threshold {
            continue;
        }

        let (cos, sin) = (acc.cos[n], acc.sin[n]);
        // along-line direction is (-sin, cos); step one pixel on the major axis
        let x_major = sin.abs() > cos.abs();
        let to_pixel = |major: i64, minor: i64| if x_major { (major, minor) } else { (minor, major) };
        let ideal_minor = |major: i64| -> f64 {
            if x_major {
                (rho - major as f64 * cos) / sin
            } else {
                (rho - major as f64 * sin) / cos
            }
        };
        let seed_major = if x_major { px } else { py };
        let limit = if x_major { w as i64 } else { h as i64 };

        let mut ends = [(px, py); 2];
        let mut end_major = [seed_major; 2];
        for (k, dir) in [1i64, -1].into_iter().enumerate() {
            let mut gap = 0;
            let mut major = seed_major;
            while (0..limit).contains(&major) {
                let minor = ideal_minor(major).round() as i64;
                let hit = offsets.iter().find_map(|&o| {
                    let (x, y) = to_pixel(major, minor + o);
                    index(x, y).filter(|&j| mask[j]).map(|_| (x, y))
                });
                match hit {
                    Some(p) => {
                        gap = 0;
                        ends[k] = p;
                        end_major[k] = major;
                    }
                    None => {
                        gap += 1;
                        if gap > params.max_gap {
                            break;
                        }
                    }
                }
                major += dir;
            }
        }

        let segment = Segment {
            x0: ends[1].0,
            y0: ends[1].1,
            x1: ends[0].0,
            y1: ends[0].1,
        };
        if segment.length() < params.min_length {
            // too short: only the seed is retired, so a spurious cell cannot
            // punch holes into strokes it happens to cross
            mask[i] = false;
            continue;
        }
        for major in end_major[1]..=end_major[0] {
            let minor = ideal_minor(major).round() as i64;
            for &o in &offsets {
                let (x, y) = to_pixel(major, minor + o);
                if let Some(j) = index(x, y) {
                    if mask[j] {
                        mask[j] = false;
                        if voted[j] {
                            acc.unvote(x, y);
                        }
                    }
                }
            }
        }
        segments.push(segment);
    }
    segments
}

/// Groups segments whose angle and midpoint are both within the merge
/// tolerances (transitively) and returns the number of groups.
pub fn count_merged(segments: &[Segment], params: &HoughParams) -> usize {
    let n = segments.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&segments[i], &segments[j]);
            let diff = (a.angle_deg() - b.angle_deg()).abs();
            let diff = diff.min(180.0 - diff);
            let (ma, mb) = (a.midpoint(), b.midpoint());
            let dist = ((ma.0 - mb.0).powi(2) + (ma.1 - mb.1).powi(2)).sqrt();
            if diff < params.merge_angle_deg && dist < params.merge_distance {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}
