//! Multi-output regression trees shared by the forest and boosting models.
//!
//! A split maximizes `sum_o S_L,o^2 / (n_L + lambda) + S_R,o^2 / (n_R + lambda)`
//! over features and midpoint thresholds, where `S` are per-output target
//! sums. With `lambda = 0` this is the summed SSE reduction. Leaves predict
//! `S / (n + lambda)`. Equal scores keep the first candidate in (feature,
//! threshold) ascending order.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnet::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub features_per_split: Option<usize>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat node list; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_outputs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

fn leaf_value(y: &Matrix, idx: &[usize], lambda: f64) -> Vec<f64> {
    let mut sums = vec![0.0; y.cols()];
    for &i in idx {
        for (s, v) in sums.iter_mut().zip(y.row(i)) {
            *s += v;
        }
    }
    let denom = idx.len() as f64 + lambda;
    sums.iter().map(|s| s / denom).collect()
}

fn score(sums: &[f64], n: usize, lambda: f64) -> f64 {
    let denom = n as f64 + lambda;
    sums.iter().map(|s| s * s / denom).sum()
}

/// Best split of rows `idx` over `features`, or `None` when no split leaves
/// `min_leaf` rows on both sides and improves on the unsplit score.
pub fn best_split(x: &Matrix, y: &Matrix, idx: &[usize], features: &[usize], min_leaf: usize, lambda: f64) -> Option<BestSplit> {
    let n = idx.len();
    let o = y.cols();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let mut total = vec![0.0; o];
    for &i in idx {
        for (t, v) in total.iter_mut().zip(y.row(i)) {
            *t += v;
        }
    }
    let parent = score(&total, n, lambda);
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();
    let mut left = vec![0.0; o];
    let mut right = vec![0.0; o];
    for &f in features {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        left.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n - 1 {
            let row = order[k];
            for (l, v) in left.iter_mut().zip(y.row(row)) {
                *l += v;
            }
            let (xa, xb) = (x.get(row, f), x.get(order[k + 1], f));
            let n_left = k + 1;
            if xa == xb || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            for ((r, t), l) in right.iter_mut().zip(&total).zip(&left) {
                *r = t - l;
            }
            let s = score(&left, n_left, lambda) + score(&right, n - n_left, lambda);
            let threshold = xa + (xb - xa) / 2.0;
            let better = match best {
                None => true,
                Some(b) => s > b.score + 1e-12 * b.score.abs().max(1e-300),
            };
            if better {
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    score: s,
                });
            }
        }
    }
    best.filter(|b| b.score > parent + 1e-12 * parent.abs().max(1e-300))
}

impl Tree {
    /// Grows a tree on rows `idx` (duplicates allowed, as in a bootstrap).
    pub fn fit<R: Rng>(x: &Matrix, y: &Matrix, idx: &[usize], params: &TreeParams, rng: &mut R) -> Tree {
        let d = x.cols();
        let m = params.features_per_split.unwrap_or(d).clamp(1, d);
        let mut tree = Tree {
            nodes: Vec::new(),
            n_outputs: y.cols(),
        };
        // (node slot, rows, depth)
        let mut stack: Vec<(usize, Vec<usize>, usize)> = Vec::new();
        tree.nodes.push(Node::Leaf { value: Vec::new() });
        stack.push((0, idx.to_vec(), 0));
        while let Some((slot, rows, depth)) = stack.pop() {
            let can_split = params.max_depth.is_none_or(|md| depth < md);
            let split = if can_split {
                let mut features: Vec<usize> = if m == d {
                    (0..d).collect()
                } else {
                    sample(rng, d, m).into_vec()
                };
                features.sort_unstable();
                best_split(x, y, &rows, &features, params.min_leaf, params.lambda)
            } else {
                None
            };
            match split {
                None => {
                    tree.nodes[slot] = Node::Leaf {
                        value: leaf_value(y, &rows, params.lambda),
                    };
                }
                Some(s) => {
                    let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                    let left = tree.nodes.len();
                    tree.nodes.push(Node::Leaf { value: Vec::new() });
                    let right = tree.nodes.len();
                    tree.nodes.push(Node::Leaf { value: Vec::new() });
                    tree.nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right,
                    };
                    // Right first so the left subtree is expanded first.
                    stack.push((right, r_rows, depth + 1));
                    stack.push((left, l_rows, depth + 1));
                }
            }
        }
        tree
    }

    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn full_params() -> TreeParams {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            lambda: 0.0,
        }
    }

    #[test]
    fn fully_grown_tree_memorizes_distinct_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_vec(30, 2, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = Matrix::from_vec(30, 2, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        let idx: Vec<usize> = (0..30).collect();
        let tree = Tree::fit(&x, &y, &idx, &full_params(), &mut rng);
        for i in 0..30 {
            assert_eq!(tree.predict_row(x.row(i)), y.row(i));
        }
        assert_eq!(tree.n_leaves(), 30);
    }

    #[test]
    fn step_data_splits_at_the_step() {
        let xs = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let x = Matrix::from_vec(6, 1, xs.to_vec()).unwrap();
        let y = Matrix::from_vec(6, 1, vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0]).unwrap();
        let params = TreeParams {
            max_depth: Some(1),
            ..full_params()
        };
        let tree = Tree::fit(&x, &y, &(0..6).collect::<Vec<_>>(), &params, &mut ChaCha8Rng::seed_from_u64(0));
        match tree.nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - 0.5).abs() < 1e-15),
            _ => panic!("expected a split"),
        }
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn constant_targets_make_a_single_leaf() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Matrix::filled(4, 1, 2.0);
        let tree = Tree::fit(&x, &y, &[0, 1, 2, 3], &full_params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[9.0]), &[2.0]);
    }

    #[test]
    fn min_leaf_and_lambda_are_respected() {
        let x = Matrix::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = Matrix::from_vec(5, 1, vec![0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        let params = TreeParams {
            min_leaf: 2,
            lambda: 1.0,
            ..full_params()
        };
        let tree = Tree::fit(&x, &y, &[0, 1, 2, 3, 4], &params, &mut ChaCha8Rng::seed_from_u64(0));
        // {1,2,3} | {4,5}: the right leaf is 10 / (2 + 1).
        assert!((tree.predict_row(&[5.0])[0] - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(tree.predict_row(&[1.0])[0], 0.0);
    }
}
