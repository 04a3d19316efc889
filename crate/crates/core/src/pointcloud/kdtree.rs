//! Exact k-nearest-neighbour search over a [`PointCloud`].
//!
//! Neighbours are ordered by `(squared distance, point index)`, so results are
//! deterministic even when several points sit at the same distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::PointCloud;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    cloud: &'a PointCloud,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

/// One search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn build(cloud: &'a PointCloud) -> Self {
        let mut tree = KdTree {
            cloud,
            perm: (0..cloud.len()).collect(),
            nodes: Vec::new(),
        };
        if !cloud.is_empty() {
            tree.build_node(0, cloud.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.cloud.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &self.perm[start..end] {
            for (d, c) in self.cloud.point(i).iter().enumerate() {
                lo[d] = lo[d].min(*c);
                hi[d] = hi[d].max(*c);
            }
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] <= lo[axis] {
            // every point coincides
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let cloud = self.cloud;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            cloud.point(a)[axis].total_cmp(&cloud.point(b)[axis])
        });
        let value = cloud.point(self.perm[mid])[axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, nearest first. `exclude` skips one
    /// point index (typically the query point itself).
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let dist2 = squared_distance(self.cloud.point(i), query);
                    let cand = Neighbor { index: i, dist2 };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                // Inclusive bound: equal-distance points across the split still
                // compete on index.
                let worst = heap.peek().map(|n| n.dist2);
                if heap.len() < k || worst.is_some_and(|w| diff * diff <= w) {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cloud: &PointCloud, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = (0..cloud.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| Neighbor {
                index: i,
                dist2: squared_distance(cloud.point(i), q),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..400).map(|_| rng.random()).collect();
        let cloud = PointCloud::from_points(3, pts).unwrap();
        let tree = KdTree::build(&cloud);
        for i in (0..cloud.len()).step_by(13) {
            for k in [1, 5, 17] {
                assert_eq!(
                    tree.nearest(cloud.point(i), k, Some(i)),
                    brute(&cloud, cloud.point(i), k, Some(i))
                );
            }
        }
    }

    #[test]
    fn ties_resolved_by_index() {
        // a 1-D lattice on a grid: many equal distances
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [(i % 10) as f64, (i / 10) as f64]).collect();
        let cloud = PointCloud::from_points(2, pts).unwrap();
        let tree = KdTree::build(&cloud);
        for i in 0..cloud.len() {
            assert_eq!(
                tree.nearest(cloud.point(i), 6, Some(i)),
                brute(&cloud, cloud.point(i), 6, Some(i))
            );
        }
    }

    #[test]
    fn identical_points() {
        let cloud = PointCloud::from_points(3, vec![[1.0, 1.0, 1.0]; 30]).unwrap();
        let tree = KdTree::build(&cloud);
        let nn = tree.nearest(&[1.0, 1.0, 1.0], 4, Some(0));
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
