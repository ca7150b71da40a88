// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Static 2D k-d tree for nearest-neighbour queries.
//!
//! Distances are evaluated with [`dist_sq`], so results match a brute-force
//! scan bit for bit. Duplicate points are fine.

use crate::geometry::{dist_sq, Point2};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
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

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point2>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point2]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for &i in &self.order[start..end] {
            for k in 0..2 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
        if hi[axis] - lo[axis] == 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, q: Point2) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    /// Nearest point within `max_dist`, if any.
    pub fn nearest_within(&self, q: Point2, max_dist: f64) -> Option<(usize, f64)> {
        self.nearest(q).filter(|&(_, d2)| d2 <= max_dist * max_dist)
    }

    fn search(&self, node: usize, q: Point2, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = dist_sq(q, self.points[i]);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// O(n) scan; the reference the tree is checked against.
pub fn nearest_brute_force(points: &[Point2], q: Point2) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = dist_sq(q, *p);
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest([0.0, 0.0]).is_none());
    }

    #[test]
    fn many_duplicates() {
        let pts = vec![[1.0, 1.0]; 100];
        let t = KdTree::new(&pts);
        let (i, d2) = t.nearest([0.0, 1.0]).unwrap();
        assert_eq!(i, 0);
        assert_eq!(d2, 1.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..300),
            qs in prop::collection::vec((-12.0..12.0f64, -12.0..12.0f64), 1..20),
        ) {
            let pts: Vec<Point2> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let tree = KdTree::new(&pts);
            for (x, y) in qs {
                let (_, a) = tree.nearest([x, y]).unwrap();
                let (_, b) = nearest_brute_force(&pts, [x, y]).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
