//! Two-pass connected-component labelling with a union-find forest.

use super::BinaryRaster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is the background label
        Self {
            parent: vec![0],
            rank: vec![0],
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
        hi
    }
}

/// Per-pixel component labels; 0 is background, components are numbered
/// 1..=count in raster order of their first pixel.
#[derive(Clone, Debug)]
pub struct Labels {
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl Labels {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per component, indexed by `label - 1`.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count];
        for &l in &self.labels {
            if l != 0 {
                areas[l as usize - 1] += 1;
            }
        }
        areas
    }
}

pub fn label_components(img: &BinaryRaster, connectivity: Connectivity) -> Labels {
    let (w, h) = (img.width(), img.height());
    let ink = img.ink();
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !ink[i] {
                continue;
            }
            // previously visited neighbours
            let mut label = 0u32;
            let mut visit = |n: usize, sets: &mut DisjointSet| {
                let l = provisional[n];
                if l != 0 {
                    label = if label == 0 { l } else { sets.union(label, l) };
                }
            };
            if x > 0 {
                visit(i - 1, &mut sets);
            }
            if y > 0 {
                visit(i - w, &mut sets);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        visit(i - w - 1, &mut sets);
                    }
                    if x + 1 < w {
                        visit(i - w + 1, &mut sets);
                    }
                }
            }
            provisional[i] = if label == 0 { sets.make() } else { label };
        }
    }

    let mut relabel = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if relabel[root] == 0 {
            count += 1;
            relabel[root] = count;
        }
        *l = relabel[root];
    }
    Labels {
        width: w,
        labels,
        count: count as usize,
    }
}

pub fn component_areas(img: &BinaryRaster, connectivity: Connectivity) -> Vec<usize> {
    label_components(img, connectivity).areas()
}
