//! Average-linkage agglomerative clustering under cosine distance.

use serde::{Deserialize, Serialize};

use super::{ContentError, EmbeddingVector, NormalizedCorpus};

/// One agglomeration step. Node ids follow the usual convention: leaves are
/// `0..n`, and the cluster formed at step `i` gets id `n + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutRule {
    NClusters(usize),
    Distance(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clustering {
    pub merges: Vec<Merge>,
    /// Cluster label per input, numbered by first appearance.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub cut: CutRule,
}

impl Clustering {
    /// Leaves in left-to-right dendrogram order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.labels.len();
        if self.merges.is_empty() {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(node) = stack.pop() {
            if node < n {
                out.push(node);
            } else {
                let m = &self.merges[node - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        // a forest only occurs if merging stopped early, which this API never does
        out
    }
}

/// Tie-break key for a pair of cluster slots (slot = smallest member index).
#[inline]
fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

#[inline]
fn better(d: f64, key: (usize, usize), best_d: f64, best_key: (usize, usize)) -> bool {
    d < best_d || (d == best_d && key < best_key)
}

struct State {
    n: usize,
    dist: Vec<f64>,
    active: Vec<bool>,
    nn: Vec<usize>,
    nn_dist: Vec<f64>,
}

impl State {
    #[inline]
    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    fn recompute_row(&mut self, i: usize) {
        let mut best = (f64::INFINITY, (usize::MAX, usize::MAX), usize::MAX);
        for j in 0..self.n {
            if j == i || !self.active[j] {
                continue;
            }
            let d = self.d(i, j);
            let key = pair_key(i, j);
            if better(d, key, best.0, best.1) {
                best = (d, key, j);
            }
        }
        self.nn[i] = best.2;
        self.nn_dist[i] = best.0;
    }
}

/// Full merge sequence plus labels from cutting it with `cut`. Among pairs
/// at equal distance the one with the smallest member indices merges first.
pub fn hierarchical_cluster(embs: &[(String, EmbeddingVector)], cut: CutRule) -> Result<Clustering, ContentError> {
    let n = embs.len();
    if n == 0 {
        return Err(ContentError::Empty);
    }
    let corpus = NormalizedCorpus::new(embs)?;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = corpus.distance(i, j);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut st = State {
        n,
        dist,
        active: vec![true; n],
        nn: vec![usize::MAX; n],
        nn_dist: vec![f64::INFINITY; n],
    };
    for i in 0..n {
        st.recompute_row(i);
    }
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut pick = (f64::INFINITY, (usize::MAX, usize::MAX));
        for i in 0..n {
            if st.active[i] && st.nn[i] != usize::MAX {
                let key = pair_key(i, st.nn[i]);
                if better(st.nn_dist[i], key, pick.0, pick.1) {
                    pick = (st.nn_dist[i], key);
                }
            }
        }
        let (height, (a, b)) = pick;
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if k == a || k == b || !st.active[k] {
                continue;
            }
            let d = (sa * st.d(k, a) + sb * st.d(k, b)) / (sa + sb);
            st.dist[k * n + a] = d;
            st.dist[a * n + k] = d;
        }
        st.active[b] = false;
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height,
            size: size[a] + size[b],
        });
        size[a] += size[b];
        node[a] = n + step;

        for k in 0..n {
            if k == a || !st.active[k] {
                continue;
            }
            if st.nn[k] == a || st.nn[k] == b {
                st.recompute_row(k);
            } else {
                let d = st.d(k, a);
                if better(d, pair_key(k, a), st.nn_dist[k], pair_key(k, st.nn[k])) {
                    st.nn[k] = a;
                    st.nn_dist[k] = d;
                }
            }
        }
        st.recompute_row(a);
    }

    let applied = match cut {
        CutRule::NClusters(k) => n - k.clamp(1, n),
        CutRule::Distance(d) => merges.iter().take_while(|m| m.height <= d).count(),
    };
    let labels = cut_labels(n, &merges[..applied]);
    Ok(Clustering {
        n_clusters: n - applied,
        merges,
        labels,
        cut,
    })
}

fn cut_labels(n: usize, merges: &[Merge]) -> Vec<usize> {
    // node id -> representative leaf
    let mut rep: Vec<usize> = (0..n).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for m in merges {
        let (ra, rb) = (find(&mut parent, rep[m.left]), find(&mut parent, rep[m.right]));
        parent[rb] = ra;
        rep.push(ra);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::{cosine_distance, EmbeddingSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(v, EmbeddingSource::Text, "m").unwrap()
    }

    /// Recomputes average linkage from member lists at every step.
    fn naive(embs: &[(String, EmbeddingVector)]) -> Vec<(usize, usize, usize, f64)> {
        let n = embs.len();
        let d = |i: usize, j: usize| cosine_distance(&embs[i].1, &embs[j].1).unwrap();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut out = Vec::new();
        for step in 0..n - 1 {
            let mut best = (f64::INFINITY, (usize::MAX, usize::MAX), 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let (ma, mb) = (&clusters[a].1, &clusters[b].1);
                    let mut s = 0.0;
                    for &i in ma {
                        for &j in mb {
                            s += d(i, j);
                        }
                    }
                    let avg = s / (ma.len() * mb.len()) as f64;
                    let ka = *ma.iter().min().unwrap();
                    let kb = *mb.iter().min().unwrap();
                    let key = (ka.min(kb), ka.max(kb));
                    if avg < best.0 || (avg == best.0 && key < best.1) {
                        best = (avg, key, a, b);
                    }
                }
            }
            let (h, _, a, b) = best;
            let (first, second) = {
                let ka = *clusters[a].1.iter().min().unwrap();
                let kb = *clusters[b].1.iter().min().unwrap();
                if ka < kb { (a, b) } else { (b, a) }
            };
            let left = clusters[first].0;
            let right = clusters[second].0;
            let mut members = clusters[first].1.clone();
            members.extend(clusters[second].1.iter().copied());
            out.push((left, right, members.len(), h));
            let (hi, lo) = (a.max(b), a.min(b));
            clusters.remove(hi);
            clusters.remove(lo);
            clusters.push((n + step, members));
        }
        out
    }

    #[test]
    fn single_point_is_one_cluster() {
        let c = hierarchical_cluster(&[("a".into(), emb(vec![1.0, 0.0]))], CutRule::NClusters(3)).unwrap();
        assert_eq!(c.labels, vec![0]);
        assert!(c.merges.is_empty());
        assert_eq!(c.n_clusters, 1);
        assert!(hierarchical_cluster(&[], CutRule::NClusters(1)).is_err());
    }

    #[test]
    fn matches_naive_oracle_small_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let n = rng.random_range(2..=12);
            let embs: Vec<_> = (0..n)
                .map(|i| (format!("e{i}"), emb((0..5).map(|_| rng.random_range(-1.0..1.0)).collect())))
                .collect();
            let got = hierarchical_cluster(&embs, CutRule::NClusters(1)).unwrap();
            let want = naive(&embs);
            assert_eq!(got.merges.len(), want.len());
            for (g, w) in got.merges.iter().zip(&want) {
                assert_eq!((g.left, g.right, g.size), (w.0, w.1, w.2));
                assert!((g.height - w.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_blobs_split_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut embs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let blob = i % 2;
            let centre = if blob == 0 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let v: Vec<f64> = centre.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect();
            embs.push((format!("p{i}"), emb(v)));
            truth.push(blob);
        }
        let c = hierarchical_cluster(&embs, CutRule::NClusters(2)).unwrap();
        assert_eq!(c.labels, truth);
        let heights: Vec<f64> = c.merges.iter().map(|m| m.height).collect();
        assert!(heights.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let by_distance = hierarchical_cluster(&embs, CutRule::Distance(0.5)).unwrap();
        assert_eq!(by_distance.labels, truth);
        assert_eq!(c.leaf_order().len(), 40);
    }

    #[test]
    fn ties_merge_lowest_indices_first() {
        // four points on two orthogonal axes; both within-pair distances are 0
        let embs: Vec<_> = [[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]]
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("t{i}"), emb(v.to_vec())))
            .collect();
        let c = hierarchical_cluster(&embs, CutRule::NClusters(2)).unwrap();
        assert_eq!((c.merges[0].left, c.merges[0].right), (0, 2));
        assert_eq!((c.merges[1].left, c.merges[1].right), (1, 3));
        assert_eq!(c.labels, vec![0, 1, 0, 1]);
    }
}
