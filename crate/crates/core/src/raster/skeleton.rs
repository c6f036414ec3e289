//! Zhang-Suen thinning with two changes.
//!
//! A pixel needs at least three ink neighbours (not two) to be deletable.
//! With two, the tip of a 4-connected diagonal staircase always qualifies,
//! and diagonal strokes are eaten from their ends one pixel per pass.
//!
//! Candidates for each sub-iteration are found in parallel as in the
//! original algorithm, but are then removed one at a time, re-checking the
//! crossing number and neighbour count against the current state. The
//! re-check keeps 2x2 blocks (which plain Zhang-Suen erases entirely) and
//! other small shapes from disappearing, so the 8-connected component count
//! never changes.

use super::BinaryRaster;

/// Neighbours P2..P9, clockwise from north.
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[inline]
fn ring(img: &BinaryRaster, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as i64, y as i64);
    let mut n = [false; 8];
    for (slot, (dx, dy)) in n.iter_mut().zip(RING) {
        *slot = img.get_signed(x + dx, y + dy);
    }
    n
}

/// (number of 0->1 transitions around the ring, number of ink neighbours)
#[inline]
fn crossing_and_count(n: &[bool; 8]) -> (u32, u32) {
    let mut a = 0;
    let mut b = 0;
    for i in 0..8 {
        if !n[i] && n[(i + 1) % 8] {
            a += 1;
        }
        if n[i] {
            b += 1;
        }
    }
    (a, b)
}

#[inline]
fn removable(n: &[bool; 8]) -> bool {
    let (a, b) = crossing_and_count(n);
    a == 1 && (3..=6).contains(&b)
}

pub fn skeletonize(img: &BinaryRaster) -> BinaryRaster {
    let mut out = img.clone();
    let mut active: Vec<(usize, usize)> = out.ink_points().collect();
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            candidates.clear();
            for &(x, y) in &active {
                if !out.get(x, y) {
                    continue;
                }
                let n = ring(&out, x, y);
                if !removable(&n) {
                    continue;
                }
                // indices: 0=P2 (N), 2=P4 (E), 4=P6 (S), 6=P8 (W)
                let keep = if step == 0 {
                    (n[0] && n[2] && n[4]) || (n[2] && n[4] && n[6])
                } else {
                    (n[0] && n[2] && n[6]) || (n[0] && n[4] && n[6])
                };
                if !keep {
                    candidates.push((x, y));
                }
            }
            for &(x, y) in &candidates {
                if removable(&ring(&out, x, y)) {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        active.retain(|&(x, y)| out.get(x, y));
    }
    out
}
